//! End-to-end run on the bundled synthetic dataset: generate, train,
//! predict on the held-out concepts, evaluate, and compare against the
//! untrained model and the sound-class baseline.

use std::path::Path;

use crate::alignment::ScoringScheme;
use crate::clustering::SCA_BASELINE_THRESHOLD;
use crate::dataio::synthetic::{generate, SyntheticSpec};
use crate::dataio::{save_wordlist, Wordlist};
use crate::error::Result;
use crate::evaluation::{evaluate_dataset, EvaluationReport, Pooling};
use crate::model::{save_checkpoint, ModelConfig};
use crate::pipeline::{predict_wordlist, sca_baseline_predictions};
use crate::training::{train, ThresholdChoice, TrainConfig};

#[derive(Debug, Clone)]
pub struct DemoOptions {
    pub seed: u64,
    pub epochs: usize,
    /// Also score the untrained model and the sound-class baseline.
    pub with_baselines: bool,
}

impl Default for DemoOptions {
    fn default() -> Self {
        DemoOptions {
            seed: 42,
            epochs: 32,
            with_baselines: true,
        }
    }
}

#[derive(Debug)]
pub struct DemoReport {
    pub trained: EvaluationReport,
    pub untrained: Option<EvaluationReport>,
    pub sca_baseline: Option<EvaluationReport>,
    pub threshold: ThresholdChoice,
    pub gold_test: Wordlist,
}

/// Run the whole pipeline on the bundled synthetic dataset, writing the
/// dataset, checkpoint and predictions into `out_dir`.
pub fn run_demo(out_dir: &Path, opts: &DemoOptions) -> Result<DemoReport> {
    std::fs::create_dir_all(out_dir)?;
    let (train_wl, test_wl) = generate(&SyntheticSpec::default());
    save_wordlist(&train_wl, out_dir.join("train.tsv"))?;
    save_wordlist(&test_wl, out_dir.join("test.tsv"))?;

    let scheme = ScoringScheme::shipped();
    let tcfg = TrainConfig {
        epochs: opts.epochs,
        seed: opts.seed,
        ..TrainConfig::default()
    };
    let test_languages = test_wl.languages();
    let out = train(
        &train_wl,
        &tcfg,
        &ModelConfig::small(768),
        &test_languages,
        &scheme,
    )?;
    out.warnings.eprint_all("demo: ");
    save_checkpoint(
        out_dir.join("model.ckpt"),
        &out.params,
        &out.config,
        Some(out.threshold.threshold),
        Some(out.vocab.id_ordered_tokens()),
    )?;

    let (predicted, w) = predict_wordlist(
        &test_wl,
        &out.params,
        &out.config,
        &out.vocab,
        out.threshold.threshold,
        &scheme,
    )?;
    w.eprint_all("demo: ");
    save_wordlist(&predicted, out_dir.join("predictions.tsv"))?;
    let trained = evaluate_dataset(&test_wl, &predicted, Pooling::PerFamily)?;

    let (untrained, sca_baseline) = if opts.with_baselines {
        let zero = TrainConfig {
            epochs: 0,
            ..tcfg.clone()
        };
        let raw = train(
            &train_wl,
            &zero,
            &ModelConfig::small(768),
            &test_languages,
            &scheme,
        )?;
        let (pred0, _) = predict_wordlist(
            &test_wl,
            &raw.params,
            &raw.config,
            &raw.vocab,
            raw.threshold.threshold,
            &scheme,
        )?;
        let untrained = evaluate_dataset(&test_wl, &pred0, Pooling::PerFamily)?;

        let (sca_pred, _) = sca_baseline_predictions(&test_wl, &scheme, SCA_BASELINE_THRESHOLD)?;
        save_wordlist(&sca_pred, out_dir.join("predictions_sca.tsv"))?;
        let sca = evaluate_dataset(&test_wl, &sca_pred, Pooling::PerFamily)?;
        (Some(untrained), Some(sca))
    } else {
        (None, None)
    };

    Ok(DemoReport {
        trained,
        untrained,
        sca_baseline,
        threshold: out.threshold,
        gold_test: test_wl,
    })
}
