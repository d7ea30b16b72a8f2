//! B-Cubed precision, recall and F1 between a predicted and a gold
//! clustering.
//!
//! Per item: precision is the fraction of its predicted cluster that
//! shares its gold class, recall the fraction of its gold class that
//! shares its predicted cluster; both average over items and combine as
//! a harmonic mean. Dataset evaluation pools all words of a family
//! (cluster ids namespaced per concept, so clusters never span concepts)
//! and reports the unweighted mean across families.

use std::collections::HashMap;
use std::hash::Hash;

use crate::dataio::{Wordlist, PREDICTION_COLUMN};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BCubedScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// B-Cubed over items given as (gold label, predicted label) pairs.
pub fn bcubed<G: Eq + Hash, P: Eq + Hash>(items: &[(G, P)]) -> Result<BCubedScores> {
    if items.is_empty() {
        return Err(Error::data("B-Cubed needs a non-empty item set"));
    }
    let mut gold_sizes: HashMap<&G, usize> = HashMap::new();
    let mut pred_sizes: HashMap<&P, usize> = HashMap::new();
    let mut joint: HashMap<(&G, &P), usize> = HashMap::new();
    for (g, p) in items {
        *gold_sizes.entry(g).or_insert(0) += 1;
        *pred_sizes.entry(p).or_insert(0) += 1;
        *joint.entry((g, p)).or_insert(0) += 1;
    }
    let mut precision = 0.0;
    let mut recall = 0.0;
    for (g, p) in items {
        let inter = joint[&(g, p)] as f64;
        precision += inter / pred_sizes[p] as f64;
        recall += inter / gold_sizes[g] as f64;
    }
    let n = items.len() as f64;
    precision /= n;
    recall /= n;
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    Ok(BCubedScores {
        precision,
        recall,
        f1,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct FamilyScore {
    pub family: String,
    pub scores: BCubedScores,
    pub words: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvaluationReport {
    pub rows: Vec<FamilyScore>,
    pub mean: BCubedScores,
}

/// How words pool into one B-Cubed computation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pooling {
    /// All words of a family in one computation (the default).
    PerFamily,
    /// Score each concept separately, then average within the family.
    PerConcept,
}

/// Join two wordlists on word id and score the predicted clustering per
/// family, plus the unweighted mean across families. The predicted label
/// comes from the PREDICTED_COGID column when present, else COGID.
pub fn evaluate_dataset(
    gold: &Wordlist,
    predicted: &Wordlist,
    pooling: Pooling,
) -> Result<EvaluationReport> {
    let pred_col = predicted.extra_index(PREDICTION_COLUMN);
    let mut pred_by_id: HashMap<u64, String> = HashMap::new();
    for r in &predicted.records {
        let label = match pred_col {
            Some(c) => r.extra[c].clone(),
            None => r.cogid.clone(),
        };
        pred_by_id.insert(r.id, label);
    }

    let missing: Vec<u64> = gold
        .records
        .iter()
        .map(|r| r.id)
        .filter(|id| !pred_by_id.contains_key(id))
        .collect();
    let extra: Vec<u64> = {
        let gold_ids: std::collections::HashSet<u64> =
            gold.records.iter().map(|r| r.id).collect();
        predicted
            .records
            .iter()
            .map(|r| r.id)
            .filter(|id| !gold_ids.contains(id))
            .collect()
    };
    if !missing.is_empty() || !extra.is_empty() {
        let show = |ids: &[u64]| {
            ids.iter()
                .take(10)
                .map(u64::to_string)
                .collect::<Vec<_>>()
                .join(", ")
        };
        return Err(Error::data(format!(
            "word id mismatch between gold and predictions: {} gold ids lack predictions [{}], {} predicted ids are unknown [{}]",
            missing.len(),
            show(&missing),
            extra.len(),
            show(&extra)
        )));
    }

    let mut rows = Vec::new();
    for family in gold.families() {
        let fam_records: Vec<_> = gold
            .records
            .iter()
            .filter(|r| r.family == family)
            .collect();
        let scores = match pooling {
            Pooling::PerFamily => {
                // namespace labels by concept: a cluster never spans concepts
                let items: Vec<((String, String), (String, String))> = fam_records
                    .iter()
                    .map(|r| {
                        (
                            (r.concept.clone(), r.cogid.clone()),
                            (r.concept.clone(), pred_by_id[&r.id].clone()),
                        )
                    })
                    .collect();
                bcubed(&items)?
            }
            Pooling::PerConcept => {
                let mut concept_order: Vec<&str> = Vec::new();
                let mut by_concept: HashMap<&str, Vec<(String, String)>> = HashMap::new();
                for r in &fam_records {
                    if !by_concept.contains_key(r.concept.as_str()) {
                        concept_order.push(r.concept.as_str());
                    }
                    by_concept
                        .entry(r.concept.as_str())
                        .or_default()
                        .push((r.cogid.clone(), pred_by_id[&r.id].clone()));
                }
                let mut acc = BCubedScores {
                    precision: 0.0,
                    recall: 0.0,
                    f1: 0.0,
                };
                for c in &concept_order {
                    let s = bcubed(&by_concept[c])?;
                    acc.precision += s.precision;
                    acc.recall += s.recall;
                    acc.f1 += s.f1;
                }
                let n = concept_order.len() as f64;
                BCubedScores {
                    precision: acc.precision / n,
                    recall: acc.recall / n,
                    f1: acc.f1 / n,
                }
            }
        };
        rows.push(FamilyScore {
            family,
            scores,
            words: fam_records.len(),
        });
    }
    if rows.is_empty() {
        return Err(Error::data("no families to evaluate"));
    }
    let n = rows.len() as f64;
    let mean = BCubedScores {
        precision: rows.iter().map(|r| r.scores.precision).sum::<f64>() / n,
        recall: rows.iter().map(|r| r.scores.recall).sum::<f64>() / n,
        f1: rows.iter().map(|r| r.scores.f1).sum::<f64>() / n,
    };
    Ok(EvaluationReport { rows, mean })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::parse_wordlist;

    #[test]
    fn identity_scores_one() {
        let items = [(1, 10), (1, 10), (2, 20), (3, 30)];
        let s = bcubed(&items).unwrap();
        assert_eq!((s.precision, s.recall, s.f1), (1.0, 1.0, 1.0));
    }

    #[test]
    fn everything_merged_hand_case() {
        // gold {a,b},{c}; predicted one cluster: P=5/9, R=1, F=5/7
        let items = [(1, 0), (1, 0), (2, 0)];
        let s = bcubed(&items).unwrap();
        assert!((s.precision - 5.0 / 9.0).abs() < 1e-12);
        assert!((s.recall - 1.0).abs() < 1e-12);
        assert!((s.f1 - 5.0 / 7.0).abs() < 1e-12);
    }

    #[test]
    fn all_singletons_hand_case() {
        // gold {a,b},{c}; predicted singletons: P=1, R=2/3, F=0.8
        let items = [(1, 0), (1, 1), (2, 2)];
        let s = bcubed(&items).unwrap();
        assert!((s.precision - 1.0).abs() < 1e-12);
        assert!((s.recall - 2.0 / 3.0).abs() < 1e-12);
        assert!((s.f1 - 0.8).abs() < 1e-12);
    }

    #[test]
    fn relabeling_invariance_and_swap_symmetry() {
        let items = [(1, 7), (1, 7), (2, 7), (2, 9), (3, 9)];
        let relabeled = [(10, 70), (10, 70), (20, 70), (20, 90), (30, 90)];
        let a = bcubed(&items).unwrap();
        let b = bcubed(&relabeled).unwrap();
        assert_eq!(a, b);
        let swapped: Vec<(i32, i32)> = items.iter().map(|&(g, p)| (p, g)).collect();
        let c = bcubed(&swapped).unwrap();
        assert_eq!(a.precision, c.recall);
        assert_eq!(a.recall, c.precision);
        assert_eq!(a.f1, c.f1);
    }

    #[test]
    fn merging_sub_clusters_of_one_class_never_decreases_recall() {
        // predicted {a},{b} both inside gold class 1; merging them helps
        let before = [(1, 0), (1, 1), (2, 2)];
        let after = [(1, 0), (1, 0), (2, 2)];
        let sb = bcubed(&before).unwrap();
        let sa = bcubed(&after).unwrap();
        assert!(sa.recall >= sb.recall);
    }

    #[test]
    fn empty_input_is_an_error() {
        assert!(bcubed::<u8, u8>(&[]).is_err());
    }

    fn sample_pair() -> (Wordlist, Wordlist) {
        let gold = "ID\tFAMILY\tDOCULECT\tCONCEPT\tTOKENS\tCOGID\n\
            1\tF1\tl1\tall\tp\tA\n\
            2\tF1\tl2\tall\tp\tA\n\
            3\tF1\tl3\tall\tk\tB\n\
            4\tF2\tl4\tsun\ts\tA\n\
            5\tF2\tl5\tsun\ts\tB\n";
        let pred = "ID\tFAMILY\tDOCULECT\tCONCEPT\tTOKENS\tCOGID\tPREDICTED_COGID\n\
            1\tF1\tl1\tall\tp\tA\tall:0\n\
            2\tF1\tl2\tall\tp\tA\tall:0\n\
            3\tF1\tl3\tall\tk\tB\tall:1\n\
            4\tF2\tl4\tsun\ts\tA\tsun:0\n\
            5\tF2\tl5\tsun\ts\tB\tsun:0\n";
        (
            parse_wordlist(gold, "gold").unwrap(),
            parse_wordlist(pred, "pred").unwrap(),
        )
    }

    #[test]
    fn dataset_evaluation_per_family_and_mean() {
        let (gold, pred) = sample_pair();
        let report = evaluate_dataset(&gold, &pred, Pooling::PerFamily).unwrap();
        assert_eq!(report.rows.len(), 2);
        assert_eq!(report.rows[0].family, "F1");
        assert_eq!(report.rows[0].scores.f1, 1.0); // F1 predicted perfectly
        // F2: gold singletons, predicted merged: P=1/2, R=1, F=2/3
        let f2 = &report.rows[1].scores;
        assert!((f2.precision - 0.5).abs() < 1e-12);
        assert!((f2.recall - 1.0).abs() < 1e-12);
        // unweighted mean across families
        assert!((report.mean.f1 - (1.0 + 2.0 / 3.0) / 2.0).abs() < 1e-12);
    }

    #[test]
    fn dataset_evaluation_gold_vs_gold_is_perfect() {
        let (gold, _) = sample_pair();
        let report = evaluate_dataset(&gold, &gold, Pooling::PerFamily).unwrap();
        assert_eq!(report.mean.f1, 1.0);
        let report = evaluate_dataset(&gold, &gold, Pooling::PerConcept).unwrap();
        assert_eq!(report.mean.f1, 1.0);
    }

    #[test]
    fn id_mismatch_lists_offenders() {
        let (gold, mut pred) = sample_pair();
        pred.records.remove(4);
        let err = evaluate_dataset(&gold, &pred, Pooling::PerFamily).unwrap_err();
        assert!(err.to_string().contains('5'), "{err}");
    }
}
