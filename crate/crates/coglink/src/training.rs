//! Supervised end-to-end training: link targets from cognate-class ids,
//! masked cross-entropy over word pairs, AdamW, concept batching with
//! padding, and threshold selection on a held-out validation slice.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::alignment::ScoringScheme;
use crate::autodiff::Graph;
use crate::clustering::flat_upgma;
use crate::dataio::{group_by_concept, Wordlist};
use crate::error::{Error, Result, Warnings};
use crate::evaluation::bcubed;
use crate::model::{
    forward, link_loss_and_gradients_with, DropoutSpec, GradMap, ModelConfig, MsaMask,
    ParameterStore,
};
use crate::phonology::{TokenGrid, Vocabulary, PAD_ID};
use crate::pipeline::{concept_grid, converted_surface_tokens};
use crate::tensor::Tensor;

pub const IGNORE: i8 = -1;

/// Pairwise supervision grid: 1 linked, 0 unlinked, -1 ignored (diagonal,
/// padded rows).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LinkTargets {
    r: usize,
    values: Vec<i8>,
}

impl LinkTargets {
    pub fn dim(&self) -> usize {
        self.r
    }

    pub fn get(&self, i: usize, j: usize) -> i8 {
        self.values[i * self.r + j]
    }

    pub fn values(&self) -> &[i8] {
        &self.values
    }

    pub fn num_supervised(&self) -> usize {
        self.values.iter().filter(|&&v| v >= 0).count()
    }

    /// Pad to `r` rows, new cells ignored.
    pub fn padded(&self, r: usize) -> LinkTargets {
        debug_assert!(r >= self.r);
        let mut values = vec![IGNORE; r * r];
        for i in 0..self.r {
            for j in 0..self.r {
                values[i * r + j] = self.values[i * self.r + j];
            }
        }
        LinkTargets { r, values }
    }

    /// Keep the first `r` rows.
    pub fn truncated(&self, r: usize) -> LinkTargets {
        debug_assert!(r <= self.r);
        let mut values = vec![IGNORE; r * r];
        for i in 0..r {
            for j in 0..r {
                values[i * r + j] = self.values[i * self.r + j];
            }
        }
        LinkTargets { r, values }
    }
}

/// Build targets from per-word cluster ids: linked iff the ids compare
/// equal, diagonal and masked rows ignored.
pub fn link_targets<T: PartialEq>(cluster_ids: &[T], row_mask: &[bool]) -> LinkTargets {
    let r = cluster_ids.len();
    debug_assert_eq!(row_mask.len(), r);
    let mut values = vec![IGNORE; r * r];
    for i in 0..r {
        for j in 0..r {
            if i == j || !row_mask[i] || !row_mask[j] {
                continue;
            }
            values[i * r + j] = i8::from(cluster_ids[i] == cluster_ids[j]);
        }
    }
    LinkTargets { r, values }
}

/// Mean cross-entropy of raw two-class logits against link targets.
pub fn link_loss(logits: &Tensor, targets: &LinkTargets) -> f64 {
    let mut g = Graph::new();
    let l = g.constant(logits.clone());
    let loss = g.cross_entropy_mean(l, targets.values());
    g.value(loss).item()
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub validation_fraction: f64,
    pub seed: u64,
    /// Dropout rate on residual sub-block outputs during training.
    pub dropout: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 4,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            weight_decay: 0.01,
            epochs: 24,
            validation_fraction: 0.05,
            seed: 42,
            dropout: 0.1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::config("batch size must be >= 1"));
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return Err(Error::config("validation fraction must lie in (0, 1)"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::config("dropout rate must lie in [0, 1)"));
        }
        Ok(())
    }
}

/// First/second moment estimates per parameter.
#[derive(Debug, Clone, Default)]
pub struct AdamState {
    m: BTreeMap<String, Tensor>,
    v: BTreeMap<String, Tensor>,
    step: u64,
}

impl AdamState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

/// One decoupled-weight-decay Adam update with bias correction.
pub fn adamw_step(
    params: &mut ParameterStore,
    grads: &GradMap,
    state: &mut AdamState,
    cfg: &TrainConfig,
) -> Result<()> {
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    for (name, grad) in grads {
        let param = params.get_mut(name);
        if grad.shape() != param.shape() {
            return Err(Error::shape(format!(
                "gradient for {name} has shape {:?}, parameter has {:?}",
                grad.shape(),
                param.shape()
            )));
        }
        let m = state
            .m
            .entry(name.clone())
            .or_insert_with(|| Tensor::zeros(grad.shape()));
        let v = state
            .v
            .entry(name.clone())
            .or_insert_with(|| Tensor::zeros(grad.shape()));
        let (pd, md, vd, gd) = (
            param.data_mut(),
            m.data_mut(),
            v.data_mut(),
            grad.data(),
        );
        for i in 0..gd.len() {
            md[i] = cfg.beta1 * md[i] + (1.0 - cfg.beta1) * gd[i];
            vd[i] = cfg.beta2 * vd[i] + (1.0 - cfg.beta2) * gd[i] * gd[i];
            let mhat = md[i] / bc1;
            let vhat = vd[i] / bc2;
            let prev = pd[i];
            pd[i] = prev
                - cfg.learning_rate * mhat / (vhat.sqrt() + cfg.epsilon)
                - cfg.learning_rate * cfg.weight_decay * prev;
        }
    }
    Ok(())
}

/// One concept ready for batching (unpadded grid plus targets).
#[derive(Debug, Clone)]
pub struct ConceptExample {
    pub grid: TokenGrid,
    pub targets: LinkTargets,
}

#[derive(Debug, Clone)]
pub struct BatchItem {
    pub grid: TokenGrid,
    pub mask: MsaMask,
    pub targets: LinkTargets,
}

#[derive(Debug, Clone)]
pub struct Batch {
    pub items: Vec<BatchItem>,
}

fn truncate_example(ex: &ConceptExample, cfg: &ModelConfig, warnings: &mut Warnings) -> ConceptExample {
    let mut grid = ex.grid.clone();
    let mut targets = ex.targets.clone();
    if grid.rows() > cfg.max_rows {
        warnings.push(format!(
            "concept with {} words exceeds max rows {}; extra words dropped",
            grid.rows(),
            cfg.max_rows
        ));
        let r = cfg.max_rows;
        let ids: Vec<u32> = (0..r)
            .flat_map(|i| grid.row(i).to_vec())
            .collect();
        grid = TokenGrid::new(r, grid.cols(), ids).unwrap();
        targets = targets.truncated(r);
    }
    if grid.cols() > cfg.max_cols {
        warnings.push(format!(
            "concept with {} columns exceeds max columns {}; tail truncated",
            grid.cols(),
            cfg.max_cols
        ));
        let c = cfg.max_cols;
        let ids: Vec<u32> = (0..grid.rows())
            .flat_map(|i| grid.row(i)[..c].to_vec())
            .collect();
        grid = TokenGrid::new(grid.rows(), c, ids).unwrap();
    }
    ConceptExample { grid, targets }
}

/// Shuffle concepts by seed, then pad each batch to its own max rows and
/// columns, emitting masks that mark real cells. Every concept appears
/// exactly once.
pub fn make_batches(
    examples: &[ConceptExample],
    batch_size: usize,
    seed: u64,
    cfg: &ModelConfig,
    warnings: &mut Warnings,
) -> Vec<Batch> {
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);

    let mut batches = Vec::new();
    for chunk in order.chunks(batch_size) {
        let fitted: Vec<ConceptExample> = chunk
            .iter()
            .map(|&i| truncate_example(&examples[i], cfg, warnings))
            .collect();
        let max_r = fitted.iter().map(|e| e.grid.rows()).max().unwrap_or(0);
        let max_c = fitted.iter().map(|e| e.grid.cols()).max().unwrap_or(0);
        let items = fitted
            .into_iter()
            .map(|ex| {
                let (r0, c0) = (ex.grid.rows(), ex.grid.cols());
                let mut ids = vec![PAD_ID; max_r * max_c];
                let mut bits = vec![false; max_r * max_c];
                for i in 0..r0 {
                    for k in 0..c0 {
                        ids[i * max_c + k] = ex.grid.get(i, k);
                        bits[i * max_c + k] = true;
                    }
                }
                BatchItem {
                    grid: TokenGrid::new(max_r, max_c, ids).unwrap(),
                    mask: MsaMask::new(max_r, max_c, bits).unwrap(),
                    targets: ex.targets.padded(max_r),
                }
            })
            .collect();
        batches.push(Batch { items });
    }
    batches
}

/// Sum of gradient maps divided by `n`.
fn mean_grads(mut acc: GradMap, others: Vec<GradMap>, n: f64) -> GradMap {
    for g in others {
        for (name, t) in g {
            let slot = acc.get_mut(&name).expect("uniform grad keys");
            for (a, b) in slot.data_mut().iter_mut().zip(t.data()) {
                *a += b;
            }
        }
    }
    for t in acc.values_mut() {
        for v in t.data_mut() {
            *v /= n;
        }
    }
    acc
}

/// Run one batch: mean loss over contributing items and one AdamW step.
pub fn train_batch(
    batch: &Batch,
    params: &mut ParameterStore,
    state: &mut AdamState,
    tcfg: &TrainConfig,
    mcfg: &ModelConfig,
) -> Result<f64> {
    let step = state.step_count();
    let results: Vec<Option<(f64, GradMap)>> = batch
        .items
        .par_iter()
        .enumerate()
        .map(|(idx, item)| {
            if item.targets.num_supervised() == 0 {
                return Ok(None);
            }
            let dropout = DropoutSpec {
                rate: tcfg.dropout,
                seed: tcfg
                    .seed
                    .wrapping_mul(0x100_0003)
                    .wrapping_add(step.wrapping_mul(64))
                    .wrapping_add(idx as u64),
            };
            link_loss_and_gradients_with(
                &item.grid,
                &item.mask,
                item.targets.values(),
                params,
                mcfg,
                Some(&dropout),
            )
            .map(Some)
        })
        .collect::<Result<_>>()?;
    let mut contributing: Vec<(f64, GradMap)> = results.into_iter().flatten().collect();
    if contributing.is_empty() {
        return Ok(0.0);
    }
    let n = contributing.len() as f64;
    let mean_loss = contributing.iter().map(|(l, _)| l).sum::<f64>() / n;
    let (_, first) = contributing.remove(0);
    let rest: Vec<GradMap> = contributing.into_iter().map(|(_, g)| g).collect();
    let grads = mean_grads(first, rest, n);
    adamw_step(params, &grads, state, tcfg)?;
    Ok(mean_loss)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThresholdChoice {
    pub threshold: f64,
    pub validation_score: f64,
}

/// The swept grid: 0.30, 0.35, ..., 0.80.
pub fn threshold_grid() -> Vec<f64> {
    (6..=16).map(|k| k as f64 * 0.05).collect()
}

struct ValConcept {
    family: String,
    grid: TokenGrid,
    gold: Vec<String>,
}

fn sweep_threshold(
    val: &[ValConcept],
    params: &ParameterStore,
    mcfg: &ModelConfig,
) -> Result<ThresholdChoice> {
    let probs: Vec<_> = val
        .par_iter()
        .map(|vc| forward(&vc.grid, None, params, mcfg))
        .collect::<Result<_>>()?;
    let mut best = ThresholdChoice {
        threshold: 0.6,
        validation_score: f64::NEG_INFINITY,
    };
    // items are (gold label, predicted label), both namespaced by concept
    type Items = Vec<((usize, String), (usize, usize))>;
    for theta in threshold_grid() {
        let mut families: BTreeMap<&str, Items> = BTreeMap::new();
        for (ci, vc) in val.iter().enumerate() {
            let labels = flat_upgma(&probs[ci], theta)?;
            let items = families.entry(vc.family.as_str()).or_default();
            for (w, gold) in vc.gold.iter().enumerate() {
                items.push(((ci, gold.clone()), (ci, labels.get(w))));
            }
        }
        let mut mean = 0.0;
        for items in families.values() {
            mean += bcubed(items)?.f1;
        }
        mean /= families.len() as f64;
        if mean > best.validation_score {
            best = ThresholdChoice {
                threshold: theta,
                validation_score: mean,
            };
        }
    }
    Ok(best)
}

#[derive(Debug)]
pub struct TrainOutput {
    pub params: ParameterStore,
    pub config: ModelConfig,
    pub vocab: Vocabulary,
    pub threshold: ThresholdChoice,
    pub epoch_losses: Vec<f64>,
    pub warnings: Warnings,
}

/// End-to-end training on a wordlist.
///
/// Splits off `validation_fraction` of concepts per family (seeded),
/// builds the vocabulary from the converted training tokens plus the
/// given extra languages, trains for `epochs`, then sweeps the
/// clustering threshold on the validation concepts (ties resolve to the
/// lower threshold).
pub fn train(
    wordlist: &Wordlist,
    tcfg: &TrainConfig,
    mcfg_template: &ModelConfig,
    extra_languages: &[String],
    scheme: &ScoringScheme,
) -> Result<TrainOutput> {
    tcfg.validate()?;
    if wordlist.is_empty() {
        return Err(Error::data("training wordlist is empty"));
    }
    let mut warnings = Warnings::new();

    // vocabulary over converted surface tokens; language inventory is the
    // training languages plus any declared test languages
    let mut languages = wordlist.languages();
    languages.extend(extra_languages.iter().cloned());
    let surface = converted_surface_tokens(wordlist, &mut warnings);
    let vocab = Vocabulary::build(surface.iter(), &languages, mcfg_template.vocab_size)?;
    let mcfg = ModelConfig {
        vocab_size: vocab.len(),
        ..mcfg_template.clone()
    };
    mcfg.validate()?;

    // per-family validation split over concepts
    let groups = group_by_concept(wordlist);
    let mut families: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (gi, g) in groups.iter().enumerate() {
        families.entry(g.family.as_str()).or_default().push(gi);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(tcfg.seed);
    let mut is_val = vec![false; groups.len()];
    for concept_ids in families.values() {
        if concept_ids.len() < 2 {
            continue;
        }
        let n_val = ((tcfg.validation_fraction * concept_ids.len() as f64).ceil() as usize)
            .min(concept_ids.len() - 1)
            .max(1);
        let mut shuffled = concept_ids.clone();
        shuffled.shuffle(&mut rng);
        for &gi in shuffled.iter().take(n_val) {
            is_val[gi] = true;
        }
    }

    let mut train_examples: Vec<ConceptExample> = Vec::new();
    let mut val_concepts: Vec<ValConcept> = Vec::new();
    for (gi, group) in groups.iter().enumerate() {
        let words = group.words(wordlist);
        let (_, grid) = concept_grid(&words, &vocab, scheme, &mut warnings)?;
        let cogids: Vec<&str> = words.iter().map(|w| w.cogid.as_str()).collect();
        if is_val[gi] {
            val_concepts.push(ValConcept {
                family: group.family.clone(),
                grid,
                gold: cogids.iter().map(|s| s.to_string()).collect(),
            });
        } else {
            let row_mask = vec![true; words.len()];
            let targets = link_targets(&cogids, &row_mask);
            train_examples.push(ConceptExample { grid, targets });
        }
    }

    let mut params = ParameterStore::init(&mcfg, tcfg.seed)?;
    let mut state = AdamState::new();
    let mut epoch_losses = Vec::with_capacity(tcfg.epochs);
    for epoch in 0..tcfg.epochs {
        let batches = make_batches(
            &train_examples,
            tcfg.batch_size,
            tcfg.seed.wrapping_add(epoch as u64),
            &mcfg,
            &mut warnings,
        );
        let mut loss_sum = 0.0;
        let mut batch_count = 0usize;
        for batch in &batches {
            loss_sum += train_batch(batch, &mut params, &mut state, tcfg, &mcfg)?;
            batch_count += 1;
        }
        let mean = if batch_count > 0 {
            loss_sum / batch_count as f64
        } else {
            0.0
        };
        epoch_losses.push(mean);
        eprintln!("epoch {:>3}: mean link loss {mean:.4}", epoch + 1);
    }

    // sweep the clustering threshold on validation concepts; fall back to
    // the training concepts when every family was too small to hold out
    let threshold = if val_concepts.is_empty() {
        let fallback: Vec<ValConcept> = groups
            .iter()
            .map(|group| {
                let words = group.words(wordlist);
                let (_, grid) = concept_grid(&words, &vocab, scheme, &mut warnings)?;
                Ok(ValConcept {
                    family: group.family.clone(),
                    grid,
                    gold: words.iter().map(|w| w.cogid.clone()).collect(),
                })
            })
            .collect::<Result<_>>()?;
        sweep_threshold(&fallback, &params, &mcfg)?
    } else {
        sweep_threshold(&val_concepts, &params, &mcfg)?
    };

    Ok(TrainOutput {
        params,
        config: mcfg,
        vocab,
        threshold,
        epoch_losses,
        warnings,
    })
}
