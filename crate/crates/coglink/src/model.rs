//! The link-prediction network.
//!
//! Token + column-position embeddings feed a stack of MSA layers (row
//! self-attention, column self-attention, feed-forward; all pre-norm
//! residual blocks). An outer-product-mean pooling converts the
//! `r x c' x d` MSA activation into an `r x r x d` pairwise
//! representation, which a stack of pairwise layers refines with
//! triangular multiplicative updates (outgoing and incoming) and
//! triangular attention (around the starting and ending node) before a
//! two-class linear head scores every word pair.
//!
//! Rows carry no position signal, so the network is equivariant under
//! row permutation; masked (PAD) positions are excluded from every
//! attention and pooling denominator, and each sub-block output is
//! zeroed at masked positions so padding never influences live cells.

mod checkpoint;
mod layers;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Graph;
use crate::error::{Error, Result};
use crate::phonology::{TokenGrid, PAD_ID};
use crate::tensor::Tensor;

pub const MAX_VOCAB: usize = 768;

/// Architecture hyperparameters; all tensor shapes derive from these.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub hidden_size: usize,
    pub intermediate_size: usize,
    pub msa_layers: usize,
    pub pair_layers: usize,
    pub attention_heads: usize,
    pub pair_projection_size: usize,
    pub vocab_size: usize,
    pub max_rows: usize,
    pub max_cols: usize,
}

impl ModelConfig {
    /// Full-size configuration (about a million parameters).
    pub fn standard(vocab_size: usize) -> Self {
        ModelConfig {
            hidden_size: 128,
            intermediate_size: 128,
            msa_layers: 2,
            pair_layers: 2,
            attention_heads: 2,
            pair_projection_size: 32,
            vocab_size,
            max_rows: 256,
            max_cols: 256,
        }
    }

    /// Reduced configuration for CPU-friendly end-to-end runs.
    pub fn small(vocab_size: usize) -> Self {
        ModelConfig {
            hidden_size: 32,
            intermediate_size: 64,
            msa_layers: 2,
            pair_layers: 2,
            attention_heads: 2,
            pair_projection_size: 16,
            vocab_size,
            max_rows: 256,
            max_cols: 256,
        }
    }

    /// Tiny configuration for gradient checks and worked examples.
    pub fn toy(vocab_size: usize) -> Self {
        ModelConfig {
            hidden_size: 8,
            intermediate_size: 8,
            msa_layers: 2,
            pair_layers: 2,
            attention_heads: 1,
            pair_projection_size: 4,
            vocab_size,
            max_rows: 16,
            max_cols: 16,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [
            self.hidden_size,
            self.intermediate_size,
            self.msa_layers,
            self.pair_layers,
            self.attention_heads,
            self.pair_projection_size,
            self.vocab_size,
            self.max_rows,
            self.max_cols,
        ];
        if all.contains(&0) {
            return Err(Error::config("all model sizes must be >= 1"));
        }
        if !self.hidden_size.is_multiple_of(self.attention_heads) {
            return Err(Error::config(format!(
                "hidden size {} must be divisible by {} attention heads",
                self.hidden_size, self.attention_heads
            )));
        }
        if self.vocab_size > MAX_VOCAB {
            return Err(Error::config(format!(
                "vocab size {} exceeds the {MAX_VOCAB} cap",
                self.vocab_size
            )));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.hidden_size / self.attention_heads
    }
}

/// Gradients per parameter name.
pub type GradMap = BTreeMap<String, Tensor>;

/// Single-rate dropout applied to every residual sub-block output during
/// training. Rate 0 disables it; the mask stream is seeded, so training
/// stays reproducible.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DropoutSpec {
    pub rate: f64,
    pub seed: u64,
}

/// All trainable arrays, addressable by hierarchical name. Iteration
/// order (BTreeMap) is the canonical serialization order.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterStore {
    tensors: BTreeMap<String, Tensor>,
}

impl ParameterStore {
    /// Every parameter name with its shape, in canonical order.
    pub fn parameter_shapes(cfg: &ModelConfig) -> Vec<(String, Vec<usize>)> {
        let d = cfg.hidden_size;
        let inter = cfg.intermediate_size;
        let dp = cfg.pair_projection_size;
        let h = cfg.attention_heads;
        let mut out: Vec<(String, Vec<usize>)> = Vec::new();
        let mut push = |name: String, shape: Vec<usize>| out.push((name, shape));

        push("embed.token".into(), vec![cfg.vocab_size, d]);
        push("embed.position".into(), vec![cfg.max_cols, d]);

        let norm = |push: &mut dyn FnMut(String, Vec<usize>), prefix: &str, dim: usize| {
            push(format!("{prefix}.gamma"), vec![dim]);
            push(format!("{prefix}.beta"), vec![dim]);
        };
        let lin = |push: &mut dyn FnMut(String, Vec<usize>),
                       prefix: &str,
                       din: usize,
                       dout: usize| {
            push(format!("{prefix}.weight"), vec![din, dout]);
            push(format!("{prefix}.bias"), vec![dout]);
        };

        for i in 0..cfg.msa_layers {
            for attn in ["row_attn", "col_attn"] {
                let p = format!("msa.{i}.{attn}");
                norm(&mut push, &format!("{p}.norm"), d);
                for proj in ["q", "k", "v", "out"] {
                    lin(&mut push, &format!("{p}.{proj}"), d, d);
                }
            }
            let p = format!("msa.{i}.ffn");
            norm(&mut push, &format!("{p}.norm"), d);
            lin(&mut push, &format!("{p}.fc1"), d, inter);
            lin(&mut push, &format!("{p}.fc2"), inter, d);
        }

        norm(&mut push, "opm.norm", d);
        lin(&mut push, "opm.left", d, dp);
        lin(&mut push, "opm.right", d, dp);
        lin(&mut push, "opm.out", dp * dp, d);

        for i in 0..cfg.pair_layers {
            for tri in ["tri_out", "tri_in"] {
                let p = format!("pair.{i}.{tri}");
                norm(&mut push, &format!("{p}.norm"), d);
                for side in ["left", "right"] {
                    lin(&mut push, &format!("{p}.{side}_proj"), d, dp);
                    lin(&mut push, &format!("{p}.{side}_gate"), d, dp);
                }
                norm(&mut push, &format!("{p}.u_norm"), dp);
                lin(&mut push, &format!("{p}.out"), dp, d);
                lin(&mut push, &format!("{p}.gate"), d, d);
            }
            for attn in ["attn_start", "attn_end"] {
                let p = format!("pair.{i}.{attn}");
                norm(&mut push, &format!("{p}.norm"), d);
                for proj in ["q", "k", "v"] {
                    lin(&mut push, &format!("{p}.{proj}"), d, d);
                }
                push(format!("{p}.pair_bias.weight"), vec![d, h]);
                lin(&mut push, &format!("{p}.gate"), d, d);
                lin(&mut push, &format!("{p}.out"), d, d);
            }
            let p = format!("pair.{i}.transition");
            norm(&mut push, &format!("{p}.norm"), d);
            lin(&mut push, &format!("{p}.fc1"), d, inter);
            lin(&mut push, &format!("{p}.fc2"), inter, d);
        }

        norm(&mut push, "final_norm", d);
        lin(&mut push, "classifier", d, 2);
        out
    }

    /// Seeded initialization: Glorot-uniform weights, zero biases except
    /// gate biases at 1 (gates start mostly open), identity layer norms,
    /// small uniform embeddings.
    pub fn init(cfg: &ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut tensors = BTreeMap::new();
        for (name, shape) in Self::parameter_shapes(cfg) {
            let numel: usize = shape.iter().product();
            let data: Vec<f64> = if name.starts_with("embed.") {
                (0..numel).map(|_| rng.gen_range(-0.1..0.1)).collect()
            } else if name.ends_with(".weight") {
                let (fan_in, fan_out) = (shape[0], shape[1]);
                let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
                (0..numel).map(|_| rng.gen_range(-a..a)).collect()
            } else if name.ends_with(".gamma") || name.ends_with("gate.bias") {
                // identity norms; gates start mostly open
                vec![1.0; numel]
            } else {
                vec![0.0; numel] // plain biases and norm offsets
            };
            tensors.insert(name, Tensor::new(shape, data)?);
        }
        Ok(ParameterStore { tensors })
    }

    pub fn from_tensors(tensors: BTreeMap<String, Tensor>) -> Self {
        ParameterStore { tensors }
    }

    pub fn get(&self, name: &str) -> &Tensor {
        self.tensors
            .get(name)
            .unwrap_or_else(|| panic!("unknown parameter {name}"))
    }

    pub fn get_mut(&mut self, name: &str) -> &mut Tensor {
        self.tensors
            .get_mut(name)
            .unwrap_or_else(|| panic!("unknown parameter {name}"))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.tensors.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor)> {
        self.tensors.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn num_parameters(&self) -> usize {
        self.tensors.values().map(Tensor::numel).sum()
    }

    /// Check that names and shapes match a config exactly.
    pub fn matches_config(&self, cfg: &ModelConfig) -> bool {
        let want = Self::parameter_shapes(cfg);
        want.len() == self.tensors.len()
            && want
                .iter()
                .all(|(n, s)| self.tensors.get(n).is_some_and(|t| t.shape() == &s[..]))
    }
}

/// Row and per-cell validity masks for one (possibly padded) grid.
#[derive(Debug, Clone, PartialEq)]
pub struct MsaMask {
    rows: usize,
    cols: usize,
    col: Vec<bool>,
    row: Vec<bool>,
}

impl MsaMask {
    pub fn new(rows: usize, cols: usize, col: Vec<bool>) -> Result<Self> {
        if col.len() != rows * cols {
            return Err(Error::shape("mask size mismatch"));
        }
        let row = (0..rows)
            .map(|i| col[i * cols..(i + 1) * cols].iter().any(|&b| b))
            .collect();
        Ok(MsaMask {
            rows,
            cols,
            col,
            row,
        })
    }

    /// Derive masks from token ids: a cell is live iff it is not PAD.
    pub fn from_grid(grid: &TokenGrid) -> Self {
        let col: Vec<bool> = grid.ids().iter().map(|&id| id != PAD_ID).collect();
        MsaMask::new(grid.rows(), grid.cols(), col).expect("grid-derived mask is consistent")
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn cell(&self, i: usize, k: usize) -> bool {
        self.col[i * self.cols + k]
    }

    pub fn row_live(&self, i: usize) -> bool {
        self.row[i]
    }

    pub fn cell_bits(&self) -> &[bool] {
        &self.col
    }

    pub fn live_rows(&self) -> Vec<usize> {
        (0..self.rows).filter(|&i| self.row[i]).collect()
    }
}

/// Symmetric link probabilities over the live rows of a grid, in input
/// order; the diagonal is fixed at 1.
#[derive(Debug, Clone)]
pub struct LinkProbabilities {
    live_rows: Vec<usize>,
    p: Vec<f64>,
}

impl LinkProbabilities {
    pub fn dim(&self) -> usize {
        self.live_rows.len()
    }

    /// Original grid row index of live row `i`.
    pub fn live_rows(&self) -> &[usize] {
        &self.live_rows
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.p[i * self.live_rows.len() + j]
    }

    pub fn matrix(&self) -> &[f64] {
        &self.p
    }

    pub fn from_matrix(live_rows: Vec<usize>, p: Vec<f64>) -> Result<Self> {
        if p.len() != live_rows.len() * live_rows.len() {
            return Err(Error::shape("link probability matrix size mismatch"));
        }
        Ok(LinkProbabilities { live_rows, p })
    }
}

fn validate_inputs(grid: &TokenGrid, mask: &MsaMask, cfg: &ModelConfig) -> Result<()> {
    if grid.rows() != mask.rows() || grid.cols() != mask.cols() {
        return Err(Error::shape("mask shape does not match the grid"));
    }
    if grid.rows() > cfg.max_rows {
        return Err(Error::shape(format!(
            "grid has {} rows, config allows {}",
            grid.rows(),
            cfg.max_rows
        )));
    }
    if grid.cols() > cfg.max_cols {
        return Err(Error::shape(format!(
            "grid has {} columns, config allows {}",
            grid.cols(),
            cfg.max_cols
        )));
    }
    if let Some(&bad) = grid.ids().iter().find(|&&id| id as usize >= cfg.vocab_size) {
        return Err(Error::shape(format!(
            "token id {bad} exceeds vocab size {}",
            cfg.vocab_size
        )));
    }
    Ok(())
}

/// Inference: link probabilities for one grid. `mask` defaults to the
/// PAD-derived mask.
pub fn forward(
    grid: &TokenGrid,
    mask: Option<&MsaMask>,
    params: &ParameterStore,
    cfg: &ModelConfig,
) -> Result<LinkProbabilities> {
    let derived;
    let mask = match mask {
        Some(m) => m,
        None => {
            derived = MsaMask::from_grid(grid);
            &derived
        }
    };
    validate_inputs(grid, mask, cfg)?;
    let live = mask.live_rows();
    if live.is_empty() {
        return LinkProbabilities::from_matrix(live, Vec::new());
    }
    let mut g = Graph::new();
    let pv = layers::bind_params(&mut g, params, false);
    let logits = layers::build_logits(&mut g, &pv, grid, mask, cfg, &mut None);
    Ok(probs_from_logits(g.value(logits), mask))
}

/// Convert raw two-class logits into symmetrized link probabilities over
/// the live rows: p <- (p + p^T) / 2, diagonal fixed at 1.
pub fn probs_from_logits(logits: &Tensor, mask: &MsaMask) -> LinkProbabilities {
    let r = mask.rows();
    debug_assert_eq!(logits.shape(), &[r, r, 2]);
    let live = mask.live_rows();
    let n = live.len();
    let mut raw = vec![0.0f64; n * n];
    for (a, &i) in live.iter().enumerate() {
        for (b, &j) in live.iter().enumerate() {
            let l0 = logits.at(&[i, j, 0]);
            let l1 = logits.at(&[i, j, 1]);
            let m = l0.max(l1);
            let p1 = (l1 - m).exp() / ((l0 - m).exp() + (l1 - m).exp());
            raw[a * n + b] = p1;
        }
    }
    let mut p = vec![0.0f64; n * n];
    for a in 0..n {
        for b in 0..n {
            p[a * n + b] = if a == b {
                1.0
            } else {
                (raw[a * n + b] + raw[b * n + a]) / 2.0
            };
        }
    }
    LinkProbabilities { live_rows: live, p }
}

/// Training loss for one grid (mean cross-entropy over supervised pairs).
pub fn link_loss_value(
    grid: &TokenGrid,
    mask: &MsaMask,
    targets: &[i8],
    params: &ParameterStore,
    cfg: &ModelConfig,
) -> Result<f64> {
    validate_inputs(grid, mask, cfg)?;
    let mut g = Graph::new();
    let pv = layers::bind_params(&mut g, params, false);
    let logits = layers::build_logits(&mut g, &pv, grid, mask, cfg, &mut None);
    let loss = g.cross_entropy_mean(logits, targets);
    Ok(g.value(loss).item())
}

/// Loss plus gradients w.r.t. every parameter (zeros where a parameter
/// is unused by this grid). Exact (dropout-free) path.
pub fn link_loss_and_gradients(
    grid: &TokenGrid,
    mask: &MsaMask,
    targets: &[i8],
    params: &ParameterStore,
    cfg: &ModelConfig,
) -> Result<(f64, GradMap)> {
    link_loss_and_gradients_with(grid, mask, targets, params, cfg, None)
}

/// Like [`link_loss_and_gradients`], optionally with seeded dropout.
pub fn link_loss_and_gradients_with(
    grid: &TokenGrid,
    mask: &MsaMask,
    targets: &[i8],
    params: &ParameterStore,
    cfg: &ModelConfig,
    dropout: Option<&DropoutSpec>,
) -> Result<(f64, GradMap)> {
    validate_inputs(grid, mask, cfg)?;
    let mut g = Graph::new();
    let pv = layers::bind_params(&mut g, params, true);
    let mut drop = dropout.and_then(layers::DropoutState::new);
    let logits = layers::build_logits(&mut g, &pv, grid, mask, cfg, &mut drop);
    let loss = g.cross_entropy_mean(logits, targets);
    let loss_value = g.value(loss).item();
    let grads = g.backward(loss);
    let mut map = GradMap::new();
    for (name, var) in pv.iter() {
        let grad = grads[var.index()]
            .clone()
            .unwrap_or_else(|| Tensor::zeros(params.get(name).shape()));
        map.insert(name.clone(), grad);
    }
    Ok((loss_value, map))
}
