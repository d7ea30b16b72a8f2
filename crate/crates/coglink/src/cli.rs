//! Command-line interface: `align`, `train`, `predict`, `evaluate`,
//! `split`, `demo`. Results go to files or standard output; logs and
//! warnings go to standard error. Exit codes: 0 success, 1 usage error,
//! 2 data error.

use std::path::PathBuf;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

use crate::alignment::ScoringScheme;
use crate::dataio::{augment_split, load_wordlist, save_wordlist, SplitSpec};
use crate::demo::{run_demo, DemoOptions};
use crate::error::Error;
use crate::evaluation::{evaluate_dataset, EvaluationReport, Pooling};
use crate::model::{load_checkpoint, save_checkpoint, ModelConfig};
use crate::phonology::Vocabulary;
use crate::pipeline::{predict_wordlist, write_msa_files};
use crate::training::{train, TrainConfig};

#[derive(Parser)]
#[command(
    name = "coglink",
    version,
    about = "Cognate clustering: alignment, link prediction, UPGMA clustering, B-Cubed scoring"
)]
struct Cli {
    /// Worker threads for per-concept parallelism (default: all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,

    /// Force sequential execution for bit-stable reruns.
    #[arg(long, global = true)]
    deterministic: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Align every concept of a wordlist and write one MSA file each.
    Align(AlignArgs),
    /// Train the link-prediction model on a wordlist.
    Train(TrainArgs),
    /// Predict cognate clusters for a wordlist with a trained checkpoint.
    Predict(PredictArgs),
    /// Score predictions against gold labels with B-Cubed measures.
    Evaluate(EvaluateArgs),
    /// Materialize augmented train/test folds.
    Split(SplitArgs),
    /// End-to-end run on the bundled synthetic dataset.
    Demo(DemoArgs),
}

#[derive(Args)]
struct AlignArgs {
    /// Input wordlist TSV.
    #[arg(long)]
    input: PathBuf,
    /// Output directory for per-concept MSA files.
    #[arg(long)]
    output: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    /// Training wordlist TSV.
    #[arg(long)]
    input: PathBuf,
    /// Checkpoint output path.
    #[arg(long)]
    output: PathBuf,
    #[arg(long, default_value_t = 24)]
    epochs: usize,
    #[arg(long, default_value_t = 4)]
    batch_size: usize,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long, default_value_t = 1e-3)]
    learning_rate: f64,
    #[arg(long, default_value_t = 0.05)]
    validation_fraction: f64,
    /// Dropout rate on residual sub-block outputs during training.
    #[arg(long, default_value_t = 0.1)]
    dropout: f64,
    /// Optional file declaring extra (test) languages, one per line.
    #[arg(long)]
    languages: Option<PathBuf>,
    /// Architecture preset.
    #[arg(long, value_parser = ["standard", "small"], default_value = "standard")]
    preset: String,
    /// Override the hidden size of the preset.
    #[arg(long)]
    hidden_size: Option<usize>,
    /// Override the number of MSA layers.
    #[arg(long)]
    msa_layers: Option<usize>,
    /// Override the number of pairwise layers.
    #[arg(long)]
    pair_layers: Option<usize>,
    /// Override the number of attention heads.
    #[arg(long)]
    heads: Option<usize>,
}

#[derive(Args)]
struct PredictArgs {
    /// Input wordlist TSV.
    #[arg(long)]
    input: PathBuf,
    /// Trained checkpoint.
    #[arg(long)]
    checkpoint: PathBuf,
    /// Output wordlist TSV (input plus a PREDICTED_COGID column).
    #[arg(long)]
    output: PathBuf,
    /// Clustering threshold override (defaults to the checkpoint's).
    #[arg(long)]
    threshold: Option<f64>,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Gold wordlist TSV.
    #[arg(long)]
    input: PathBuf,
    /// Predicted wordlist TSV (PREDICTED_COGID or COGID column).
    #[arg(long)]
    predictions: PathBuf,
    /// Emit a machine-readable JSON report.
    #[arg(long)]
    json: bool,
    /// Write the report to a file instead of standard output.
    #[arg(long)]
    output: Option<PathBuf>,
    /// Average B-Cubed per concept inside each family instead of pooling
    /// the family's words into one computation.
    #[arg(long)]
    per_concept: bool,
}

#[derive(Args)]
struct SplitArgs {
    /// Training wordlist TSV.
    #[arg(long)]
    input: PathBuf,
    /// Test wordlist TSV.
    #[arg(long)]
    test: PathBuf,
    /// Proportion of test concepts to move into training per fold.
    #[arg(long, default_value_t = 0.125)]
    proportion: f64,
    #[arg(long, default_value_t = 5)]
    folds: usize,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Output directory; receives fold_<k>/{train,test}.tsv.
    #[arg(long)]
    output: PathBuf,
}

#[derive(Args)]
struct DemoArgs {
    /// Output directory for the dataset, checkpoint, and predictions.
    #[arg(long, default_value = "demo-out")]
    output: PathBuf,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long, default_value_t = 32)]
    epochs: usize,
    /// Skip the untrained-model and sound-class baselines.
    #[arg(long)]
    skip_baselines: bool,
    /// Emit the report as JSON.
    #[arg(long)]
    json: bool,
}

/// Run the CLI; returns the process exit code.
pub fn run<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return code;
        }
    };

    let workers = if cli.deterministic {
        Some(1)
    } else {
        cli.workers
    };
    if let Some(n) = workers {
        // the global pool can only be installed once per process
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }

    let result = match cli.command {
        Command::Align(a) => cmd_align(a),
        Command::Train(a) => cmd_train(a),
        Command::Predict(a) => cmd_predict(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Split(a) => cmd_split(a),
        Command::Demo(a) => cmd_demo(a),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Config(_) => 1,
                _ => 2,
            }
        }
    }
}

fn cmd_align(a: AlignArgs) -> crate::Result<()> {
    let wl = load_wordlist(&a.input)?;
    let (count, warnings) = write_msa_files(&wl, &a.output, &ScoringScheme::shipped())?;
    warnings.eprint_all("align: ");
    eprintln!("align: wrote {count} MSA files to {}", a.output.display());
    Ok(())
}

fn cmd_train(a: TrainArgs) -> crate::Result<()> {
    let wl = load_wordlist(&a.input)?;
    let extra_languages = match &a.languages {
        Some(path) => std::fs::read_to_string(path)?
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .map(str::to_string)
            .collect(),
        None => Vec::new(),
    };
    let mut mcfg = match a.preset.as_str() {
        "small" => ModelConfig::small(crate::model::MAX_VOCAB),
        _ => ModelConfig::standard(crate::model::MAX_VOCAB),
    };
    if let Some(d) = a.hidden_size {
        mcfg.hidden_size = d;
        mcfg.intermediate_size = d;
    }
    if let Some(n) = a.msa_layers {
        mcfg.msa_layers = n;
    }
    if let Some(n) = a.pair_layers {
        mcfg.pair_layers = n;
    }
    if let Some(n) = a.heads {
        mcfg.attention_heads = n;
    }
    mcfg.validate()?;
    let tcfg = TrainConfig {
        batch_size: a.batch_size,
        learning_rate: a.learning_rate,
        epochs: a.epochs,
        validation_fraction: a.validation_fraction,
        dropout: a.dropout,
        seed: a.seed,
        ..TrainConfig::default()
    };
    let out = train(&wl, &tcfg, &mcfg, &extra_languages, &ScoringScheme::shipped())?;
    out.warnings.eprint_all("train: ");
    save_checkpoint(
        &a.output,
        &out.params,
        &out.config,
        Some(out.threshold.threshold),
        Some(out.vocab.id_ordered_tokens()),
    )?;
    eprintln!(
        "train: {} parameters, vocabulary {}, threshold {:.2} (validation B-Cubed F {:.3})",
        out.params.num_parameters(),
        out.vocab.len(),
        out.threshold.threshold,
        out.threshold.validation_score
    );
    eprintln!("train: checkpoint written to {}", a.output.display());
    Ok(())
}

fn cmd_predict(a: PredictArgs) -> crate::Result<()> {
    if let Some(t) = a.threshold {
        if !(0.0 < t && t < 1.0) {
            return Err(Error::config(format!(
                "threshold override {t} must lie strictly between 0 and 1"
            )));
        }
    }
    let ckpt = load_checkpoint(&a.checkpoint)?;
    let vocab_tokens = ckpt.vocab_tokens.ok_or_else(|| {
        Error::checkpoint("checkpoint carries no vocabulary; retrain with this toolkit")
    })?;
    let vocab = Vocabulary::from_id_order(vocab_tokens, crate::model::MAX_VOCAB)?;
    if vocab.len() != ckpt.config.vocab_size {
        return Err(Error::checkpoint(format!(
            "checkpoint vocabulary has {} tokens but its config says {}",
            vocab.len(),
            ckpt.config.vocab_size
        )));
    }
    let threshold = match a.threshold.or(ckpt.threshold) {
        Some(t) => t,
        None => {
            return Err(Error::checkpoint(
                "checkpoint carries no threshold; pass --threshold",
            ))
        }
    };
    let wl = load_wordlist(&a.input)?;
    let (out, warnings) = predict_wordlist(
        &wl,
        &ckpt.params,
        &ckpt.config,
        &vocab,
        threshold,
        &ScoringScheme::shipped(),
    )?;
    warnings.eprint_all("predict: ");
    save_wordlist(&out, &a.output)?;
    eprintln!(
        "predict: wrote {} rows to {} (threshold {threshold:.2})",
        out.len(),
        a.output.display()
    );
    Ok(())
}

pub fn format_report_text(report: &EvaluationReport) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "{:<16}{:>10}{:>10}{:>10}{:>8}\n",
        "FAMILY", "PRECISION", "RECALL", "F1", "WORDS"
    ));
    for row in &report.rows {
        out.push_str(&format!(
            "{:<16}{:>10.3}{:>10.3}{:>10.3}{:>8}\n",
            row.family, row.scores.precision, row.scores.recall, row.scores.f1, row.words
        ));
    }
    out.push_str(&format!(
        "{:<16}{:>10.3}{:>10.3}{:>10.3}\n",
        "MEAN", report.mean.precision, report.mean.recall, report.mean.f1
    ));
    out
}

pub fn format_report_json(report: &EvaluationReport) -> String {
    let families: Vec<serde_json::Value> = report
        .rows
        .iter()
        .map(|r| {
            serde_json::json!({
                "family": r.family,
                "precision": r.scores.precision,
                "recall": r.scores.recall,
                "f1": r.scores.f1,
                "words": r.words,
            })
        })
        .collect();
    serde_json::json!({
        "families": families,
        "mean": {
            "precision": report.mean.precision,
            "recall": report.mean.recall,
            "f1": report.mean.f1,
        }
    })
    .to_string()
}

fn cmd_evaluate(a: EvaluateArgs) -> crate::Result<()> {
    let gold = load_wordlist(&a.input)?;
    let predicted = load_wordlist(&a.predictions)?;
    let pooling = if a.per_concept {
        Pooling::PerConcept
    } else {
        Pooling::PerFamily
    };
    let report = evaluate_dataset(&gold, &predicted, pooling)?;
    let text = if a.json {
        format_report_json(&report)
    } else {
        format_report_text(&report)
    };
    match &a.output {
        Some(path) => std::fs::write(path, text)?,
        None => print!("{text}"),
    }
    Ok(())
}

fn cmd_split(a: SplitArgs) -> crate::Result<()> {
    let train_wl = load_wordlist(&a.input)?;
    let test_wl = load_wordlist(&a.test)?;
    let spec = SplitSpec::new(a.proportion, a.folds, a.seed)?;
    let folds = augment_split(&train_wl, &test_wl, &spec);
    for (k, (tr, te)) in folds.iter().enumerate() {
        let dir = a.output.join(format!("fold_{k}"));
        std::fs::create_dir_all(&dir)?;
        save_wordlist(tr, dir.join("train.tsv"))?;
        save_wordlist(te, dir.join("test.tsv"))?;
    }
    eprintln!(
        "split: wrote {} folds to {}",
        folds.len(),
        a.output.display()
    );
    Ok(())
}

fn cmd_demo(a: DemoArgs) -> crate::Result<()> {
    let opts = DemoOptions {
        seed: a.seed,
        epochs: a.epochs,
        with_baselines: !a.skip_baselines,
    };
    let report = run_demo(&a.output, &opts)?;
    if a.json {
        let mut doc = serde_json::json!({
            "threshold": report.threshold.threshold,
            "validation_f1": report.threshold.validation_score,
            "trained": serde_json::from_str::<serde_json::Value>(
                &format_report_json(&report.trained)).unwrap(),
        });
        if let Some(u) = &report.untrained {
            doc["untrained_mean_f1"] = serde_json::json!(u.mean.f1);
        }
        if let Some(s) = &report.sca_baseline {
            doc["sca_baseline_mean_f1"] = serde_json::json!(s.mean.f1);
        }
        println!("{doc}");
    } else {
        println!("selected threshold: {:.2}", report.threshold.threshold);
        println!("{}", format_report_text(&report.trained));
        if let Some(u) = &report.untrained {
            println!("untrained model mean F1: {:.3}", u.mean.f1);
        }
        if let Some(s) = &report.sca_baseline {
            println!("sound-class baseline mean F1: {:.3}", s.mean.f1);
        }
    }
    Ok(())
}
