//! Command-line behavior: exit codes, file outputs, and deterministic
//! reruns. Commands run in-process through `cli::run`.

use std::path::Path;

use coglink::cli::run;
use coglink::dataio::synthetic::{generate, SyntheticSpec};
use coglink::dataio::{load_wordlist, save_wordlist, PREDICTION_COLUMN};

fn args(parts: &[&str]) -> Vec<String> {
    std::iter::once("coglink")
        .chain(parts.iter().copied())
        .map(str::to_string)
        .collect()
}

fn write_sample(dir: &Path) -> (std::path::PathBuf, std::path::PathBuf) {
    let spec = SyntheticSpec {
        concepts_per_family: 6,
        test_concepts_per_family: 2,
        languages_per_family: 4,
        seed: 77,
    };
    let (train, test) = generate(&spec);
    let train_path = dir.join("train.tsv");
    let test_path = dir.join("test.tsv");
    save_wordlist(&train, &train_path).unwrap();
    save_wordlist(&test, &test_path).unwrap();
    (train_path, test_path)
}

#[test]
fn usage_errors_exit_one_and_help_exits_zero() {
    assert_eq!(run(args(&["no-such-command"])), 1);
    assert_eq!(run(args(&["evaluate", "--no-such-flag"])), 1);
    assert_eq!(run(args(&["--help"])), 0);
    assert_eq!(run(args(&["evaluate", "--help"])), 0);
}

#[test]
fn data_errors_exit_two() {
    let code = run(args(&[
        "evaluate",
        "--input",
        "/nonexistent/gold.tsv",
        "--predictions",
        "/nonexistent/pred.tsv",
    ]));
    assert_eq!(code, 2);
}

#[test]
fn threshold_override_out_of_range_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let (_, test) = write_sample(dir.path());
    let code = run(args(&[
        "predict",
        "--input",
        test.to_str().unwrap(),
        "--checkpoint",
        "/nonexistent.ckpt",
        "--output",
        dir.path().join("out.tsv").to_str().unwrap(),
        "--threshold",
        "1.5",
    ]));
    assert_eq!(code, 1);
}

#[test]
fn evaluate_gold_against_gold_scores_one() {
    let dir = tempfile::tempdir().unwrap();
    let (_, test) = write_sample(dir.path());
    let out = dir.path().join("report.txt");
    let code = run(args(&[
        "evaluate",
        "--input",
        test.to_str().unwrap(),
        "--predictions",
        test.to_str().unwrap(),
        "--output",
        out.to_str().unwrap(),
    ]));
    assert_eq!(code, 0);
    let text = std::fs::read_to_string(&out).unwrap();
    assert!(text.contains("MEAN"), "{text}");
    let mean_line = text.lines().find(|l| l.starts_with("MEAN")).unwrap();
    assert_eq!(mean_line.matches("1.000").count(), 3, "{mean_line}");
}

#[test]
fn evaluate_per_concept_pooling_and_workers_flag() {
    let dir = tempfile::tempdir().unwrap();
    let (_, test) = write_sample(dir.path());
    let out = dir.path().join("report.txt");
    let code = run(args(&[
        "--workers",
        "2",
        "evaluate",
        "--input",
        test.to_str().unwrap(),
        "--predictions",
        test.to_str().unwrap(),
        "--per-concept",
        "--output",
        out.to_str().unwrap(),
    ]));
    assert_eq!(code, 0);
    let text = std::fs::read_to_string(&out).unwrap();
    let mean_line = text.lines().find(|l| l.starts_with("MEAN")).unwrap();
    assert_eq!(mean_line.matches("1.000").count(), 3, "{mean_line}");
}

#[test]
fn align_writes_one_file_per_concept() {
    let dir = tempfile::tempdir().unwrap();
    let (train, _) = write_sample(dir.path());
    let out = dir.path().join("msa");
    let code = run(args(&[
        "align",
        "--input",
        train.to_str().unwrap(),
        "--output",
        out.to_str().unwrap(),
    ]));
    assert_eq!(code, 0);
    let files: Vec<_> = std::fs::read_dir(&out).unwrap().collect();
    assert_eq!(files.len(), 8); // 2 families x 4 training concepts
}

#[test]
fn split_materializes_fold_directories() {
    let dir = tempfile::tempdir().unwrap();
    let (train, test) = write_sample(dir.path());
    let out = dir.path().join("folds");
    let code = run(args(&[
        "split",
        "--input",
        train.to_str().unwrap(),
        "--test",
        test.to_str().unwrap(),
        "--proportion",
        "0.5",
        "--folds",
        "3",
        "--output",
        out.to_str().unwrap(),
    ]));
    assert_eq!(code, 0);
    for k in 0..3 {
        assert!(out.join(format!("fold_{k}/train.tsv")).exists());
        assert!(out.join(format!("fold_{k}/test.tsv")).exists());
    }
}

#[test]
fn demo_subcommand_completes_and_writes_artifacts() {
    // epochs 0 keeps this fast; the full-strength demo run is covered by
    // the acceptance suite
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("demo");
    let code = run(args(&[
        "demo",
        "--output",
        out.to_str().unwrap(),
        "--epochs",
        "0",
        "--skip-baselines",
        "--json",
    ]));
    assert_eq!(code, 0);
    for file in ["train.tsv", "test.tsv", "model.ckpt", "predictions.tsv"] {
        assert!(out.join(file).exists(), "{file} missing");
    }
}

#[test]
fn train_predict_evaluate_round_trip_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let (train, test) = write_sample(dir.path());
    let ckpt = dir.path().join("model.ckpt");
    let code = run(args(&[
        "train",
        "--input",
        train.to_str().unwrap(),
        "--output",
        ckpt.to_str().unwrap(),
        "--preset",
        "small",
        "--hidden-size",
        "16",
        "--epochs",
        "2",
        "--seed",
        "3",
    ]));
    assert_eq!(code, 0);
    assert!(ckpt.exists());

    let pred1 = dir.path().join("pred1.tsv");
    let pred2 = dir.path().join("pred2.tsv");
    for out in [&pred1, &pred2] {
        let code = run(args(&[
            "predict",
            "--input",
            test.to_str().unwrap(),
            "--checkpoint",
            ckpt.to_str().unwrap(),
            "--output",
            out.to_str().unwrap(),
            "--deterministic",
        ]));
        assert_eq!(code, 0);
    }
    // reruns with the same inputs produce identical files
    assert_eq!(
        std::fs::read(&pred1).unwrap(),
        std::fs::read(&pred2).unwrap()
    );
    let predicted = load_wordlist(&pred1).unwrap();
    let col = predicted.extra_index(PREDICTION_COLUMN).unwrap();
    for r in &predicted.records {
        assert!(r.extra[col].starts_with(&format!("{}:", r.concept)));
    }

    // JSON report parses and carries the expected keys
    let report = dir.path().join("report.json");
    let code = run(args(&[
        "evaluate",
        "--input",
        test.to_str().unwrap(),
        "--predictions",
        pred1.to_str().unwrap(),
        "--json",
        "--output",
        report.to_str().unwrap(),
    ]));
    assert_eq!(code, 0);
    let doc: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert!(doc["mean"]["f1"].as_f64().is_some());
    assert_eq!(doc["families"].as_array().unwrap().len(), 2);
}
