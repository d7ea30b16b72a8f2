//! Glue between the wordlist world and the model world: build one token
//! grid per concept (merge vowels, align, convert the finished MSA to
//! the compact alphabet, tokenize), run the model, cluster, and write
//! predictions back as a wordlist column.

use rayon::prelude::*;

use crate::alignment::{align_concept, Msa, ScoringScheme};
use crate::clustering::flat_upgma;
use crate::dataio::{group_by_concept, WordRecord, Wordlist, PREDICTION_COLUMN};
use crate::error::{Error, Result, Warnings};
use crate::model::{forward, ModelConfig, ParameterStore};
use crate::phonology::{
    ipa_to_asjp, merge_consecutive_vowels, tokenize_msa, TokenGrid, Vocabulary,
};

/// Alignment and tokenization of one concept's words. Returns the MSA in
/// its source transcription plus the id grid of its converted form.
pub fn concept_grid(
    words: &[&WordRecord],
    vocab: &Vocabulary,
    scheme: &ScoringScheme,
    warnings: &mut Warnings,
) -> Result<(Msa, TokenGrid)> {
    let languages: Vec<String> = words.iter().map(|w| w.language.clone()).collect();
    let merged: Vec<Vec<_>> = words
        .iter()
        .map(|w| merge_consecutive_vowels(&w.tokens, warnings))
        .collect();
    let msa = align_concept(&merged, scheme, warnings)?;
    let converted = msa.map_tokens(|t| ipa_to_asjp(t, warnings));
    let grid = tokenize_msa(&converted, &languages, vocab)?;
    Ok((msa, grid))
}

/// Every surface token the vocabulary should know for a wordlist:
/// vowel-merged, converted segments.
pub fn converted_surface_tokens(wl: &Wordlist, warnings: &mut Warnings) -> Vec<String> {
    let mut out = Vec::new();
    for r in &wl.records {
        for tok in merge_consecutive_vowels(&r.tokens, warnings) {
            out.push(ipa_to_asjp(&tok, warnings).as_str().to_string());
        }
    }
    out
}

/// Predict cognate clusters for every concept of a wordlist and return a
/// copy with a PREDICTED_COGID column (ids namespaced per concept).
/// Concepts run in parallel; results are reduced in input order, so the
/// output is deterministic regardless of thread count.
/// Per concept: (record index, predicted label) pairs plus warnings.
type ConceptPredictions = (Vec<(usize, String)>, Warnings);

pub fn predict_wordlist(
    wl: &Wordlist,
    params: &ParameterStore,
    cfg: &ModelConfig,
    vocab: &Vocabulary,
    threshold: f64,
    scheme: &ScoringScheme,
) -> Result<(Wordlist, Warnings)> {
    let groups = group_by_concept(wl);
    let results: Vec<Result<ConceptPredictions>> = groups
        .par_iter()
        .map(|group| {
            let context = |e: Error| {
                Error::data(format!(
                    "concept {}/{}: {e}",
                    group.family, group.concept
                ))
            };
            let mut w = Warnings::new();
            let words = group.words(wl);
            let (_, grid) = concept_grid(&words, vocab, scheme, &mut w).map_err(context)?;
            let probs = forward(&grid, None, params, cfg).map_err(context)?;
            let labels = flat_upgma(&probs, threshold).map_err(context)?;
            if labels.len() != words.len() {
                return Err(Error::shape(format!(
                    "concept {}/{}: clustered {} of {} words",
                    group.family,
                    group.concept,
                    labels.len(),
                    words.len()
                )));
            }
            let out = group
                .word_indices
                .iter()
                .enumerate()
                .map(|(row, &rec_idx)| {
                    (rec_idx, format!("{}:{}", group.concept, labels.get(row)))
                })
                .collect();
            Ok((out, w))
        })
        .collect();

    let mut predictions: Vec<Option<String>> = vec![None; wl.records.len()];
    let mut warnings = Warnings::new();
    for res in results {
        let (pairs, w) = res?;
        warnings.merge(w);
        for (rec_idx, label) in pairs {
            predictions[rec_idx] = Some(label);
        }
    }

    let mut out = wl.clone();
    let col = match out.extra_index(PREDICTION_COLUMN) {
        Some(c) => c,
        None => {
            out.extra_columns.push(PREDICTION_COLUMN.to_string());
            for r in &mut out.records {
                r.extra.push(String::new());
            }
            out.extra_columns.len() - 1
        }
    };
    for (i, r) in out.records.iter_mut().enumerate() {
        r.extra[col] = predictions[i]
            .take()
            .ok_or_else(|| Error::data(format!("word {} received no prediction", r.id)))?;
    }
    Ok((out, warnings))
}

/// Cluster every concept with the sound-class baseline (similarity = 1
/// minus normalized alignment distance, flat UPGMA at `threshold`) and
/// return a wordlist with a PREDICTED_COGID column.
pub fn sca_baseline_predictions(
    wl: &Wordlist,
    scheme: &ScoringScheme,
    threshold: f64,
) -> Result<(Wordlist, Warnings)> {
    let groups = group_by_concept(wl);
    let mut warnings = Warnings::new();
    let mut predictions: Vec<Option<String>> = vec![None; wl.records.len()];
    for group in &groups {
        let words = group.words(wl);
        let merged: Vec<Vec<_>> = words
            .iter()
            .map(|w| merge_consecutive_vowels(&w.tokens, &mut warnings))
            .collect();
        let labels =
            crate::clustering::sca_baseline_cluster(&merged, scheme, threshold, &mut warnings)?;
        for (row, &rec_idx) in group.word_indices.iter().enumerate() {
            predictions[rec_idx] = Some(format!("{}:{}", group.concept, labels.get(row)));
        }
    }
    let mut out = wl.clone();
    let col = match out.extra_index(PREDICTION_COLUMN) {
        Some(c) => c,
        None => {
            out.extra_columns.push(PREDICTION_COLUMN.to_string());
            for r in &mut out.records {
                r.extra.push(String::new());
            }
            out.extra_columns.len() - 1
        }
    };
    for (i, r) in out.records.iter_mut().enumerate() {
        r.extra[col] = predictions[i]
            .take()
            .ok_or_else(|| Error::data(format!("word {} received no prediction", r.id)))?;
    }
    Ok((out, warnings))
}

/// Align every concept and write one MSA TSV per concept into `out_dir`:
/// word id, language, then the aligned tokens. Returns the file count.
pub fn write_msa_files(
    wl: &Wordlist,
    out_dir: &std::path::Path,
    scheme: &ScoringScheme,
) -> Result<(usize, Warnings)> {
    std::fs::create_dir_all(out_dir)?;
    let mut warnings = Warnings::new();
    let mut count = 0usize;
    for group in group_by_concept(wl) {
        let words = group.words(wl);
        let merged: Vec<Vec<_>> = words
            .iter()
            .map(|w| merge_consecutive_vowels(&w.tokens, &mut warnings))
            .collect();
        let msa = align_concept(&merged, scheme, &mut warnings)?;
        let sanitize = |s: &str| -> String {
            s.chars()
                .map(|c| if c.is_alphanumeric() { c } else { '_' })
                .collect()
        };
        let path = out_dir.join(format!(
            "{}__{}.msa.tsv",
            sanitize(&group.family),
            sanitize(&group.concept)
        ));
        let mut text = String::new();
        for (row, word) in words.iter().enumerate() {
            let aligned = msa
                .row(row)
                .iter()
                .map(|t| t.as_str())
                .collect::<Vec<_>>()
                .join("\t");
            text.push_str(&format!("{}\t{}\t{}\n", word.id, word.language, aligned));
        }
        std::fs::write(&path, text)?;
        count += 1;
    }
    Ok((count, warnings))
}
