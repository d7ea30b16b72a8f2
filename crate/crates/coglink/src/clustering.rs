//! Flat UPGMA clustering of pairwise link probabilities into cognate
//! sets, plus the sound-class baseline that clusters alignment distances
//! directly.
//!
//! Probabilities are similarities; UPGMA runs on distances, so p maps to
//! d = 1 - p and the similarity threshold t to the distance cutoff 1 - t:
//! clusters merge while the smallest average inter-cluster distance stays
//! at or below the cutoff.

use crate::alignment::{agglomerate, distance_matrix, ScoringScheme};
use crate::error::{Error, Result, Warnings};
use crate::model::LinkProbabilities;
use crate::phonology::PhonemeToken;

/// Default flat-cut threshold for the sound-class baseline.
pub const SCA_BASELINE_THRESHOLD: f64 = 0.45;

/// Dense cluster ids per word index. Ids start at 0 and are assigned in
/// order of each cluster's smallest member, so labelings are canonical.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClusterLabels {
    labels: Vec<usize>,
}

impl ClusterLabels {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn get(&self, word: usize) -> usize {
        self.labels[word]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn num_clusters(&self) -> usize {
        self.labels.iter().copied().max().map_or(0, |m| m + 1)
    }

    /// The link relation induced by the labels: same label <=> linked.
    pub fn link(&self, i: usize, j: usize) -> bool {
        self.labels[i] == self.labels[j]
    }

    fn from_clusters(n: usize, clusters: &[Vec<usize>]) -> Self {
        let mut labels = vec![usize::MAX; n];
        // clusters arrive ordered by smallest member
        for (id, members) in clusters.iter().enumerate() {
            for &m in members {
                labels[m] = id;
            }
        }
        debug_assert!(labels.iter().all(|&l| l != usize::MAX));
        ClusterLabels { labels }
    }
}

/// Flat UPGMA over an `n x n` similarity matrix (row-major), entries in
/// [0, 1], symmetric. `n = 0` yields empty labels.
pub fn flat_upgma_sim(sim: &[f64], n: usize, threshold: f64) -> Result<ClusterLabels> {
    if !(0.0..1.0).contains(&threshold) || threshold == 0.0 {
        return Err(Error::config(format!(
            "threshold {threshold} must lie strictly between 0 and 1"
        )));
    }
    if sim.len() != n * n {
        return Err(Error::shape("similarity matrix size mismatch"));
    }
    if n == 0 {
        return Ok(ClusterLabels { labels: Vec::new() });
    }
    for i in 0..n {
        for j in 0..n {
            let v = sim[i * n + j];
            if !(0.0..=1.0).contains(&v) || (v - sim[j * n + i]).abs() > 1e-9 {
                return Err(Error::data(
                    "similarity matrix must be symmetric with entries in [0, 1]",
                ));
            }
        }
    }
    let d: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| if i == j { 0.0 } else { 1.0 - sim[i * n + j] }).collect())
        .collect();
    let (_, clusters) = agglomerate(&d, Some(1.0 - threshold));
    Ok(ClusterLabels::from_clusters(n, &clusters))
}

/// Flat UPGMA over predicted link probabilities.
pub fn flat_upgma(p: &LinkProbabilities, threshold: f64) -> Result<ClusterLabels> {
    flat_upgma_sim(p.matrix(), p.dim(), threshold)
}

/// Sound-class baseline: similarity is 1 minus the normalized alignment
/// distance, flat-clustered at `threshold`.
pub fn sca_baseline_cluster(
    words: &[Vec<PhonemeToken>],
    scheme: &ScoringScheme,
    threshold: f64,
    warnings: &mut Warnings,
) -> Result<ClusterLabels> {
    if words.is_empty() {
        return Ok(ClusterLabels { labels: Vec::new() });
    }
    let d = distance_matrix(words, scheme, warnings)?;
    let n = words.len();
    let mut sim = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            sim[i * n + j] = if i == j { 1.0 } else { 1.0 - d[i][j] };
        }
    }
    flat_upgma_sim(&sim, n, threshold)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sim_from(entries: &[(usize, usize, f64)], n: usize) -> Vec<f64> {
        let mut s = vec![0.0; n * n];
        for i in 0..n {
            s[i * n + i] = 1.0;
        }
        for &(i, j, v) in entries {
            s[i * n + j] = v;
            s[j * n + i] = v;
        }
        s
    }

    #[test]
    fn all_linked_one_cluster() {
        let s = sim_from(&[(0, 1, 1.0), (0, 2, 1.0), (1, 2, 1.0)], 3);
        let labels = flat_upgma_sim(&s, 3, 0.6).unwrap();
        assert_eq!(labels.labels(), &[0, 0, 0]);
    }

    #[test]
    fn all_unlinked_singletons() {
        let s = sim_from(&[], 3);
        let labels = flat_upgma_sim(&s, 3, 0.6).unwrap();
        assert_eq!(labels.labels(), &[0, 1, 2]);
    }

    #[test]
    fn worked_three_item_example() {
        // p_ab=0.9, p_ac=0.2, p_bc=0.3 at threshold 0.6: {a,b} merge at
        // distance 0.1; the next candidate distance mean(0.8, 0.7)=0.75
        // exceeds the cutoff 0.4, so c stays apart.
        let s = sim_from(&[(0, 1, 0.9), (0, 2, 0.2), (1, 2, 0.3)], 3);
        let labels = flat_upgma_sim(&s, 3, 0.6).unwrap();
        assert_eq!(labels.labels(), &[0, 0, 1]);
    }

    #[test]
    fn empty_input_empty_labels() {
        let labels = flat_upgma_sim(&[], 0, 0.6).unwrap();
        assert!(labels.is_empty());
    }

    #[test]
    fn bad_threshold_rejected() {
        assert!(flat_upgma_sim(&[1.0], 1, 0.0).is_err());
        assert!(flat_upgma_sim(&[1.0], 1, 1.0).is_err());
    }

    #[test]
    fn labels_are_dense_and_canonical() {
        let s = sim_from(&[(1, 3, 0.95)], 4);
        let labels = flat_upgma_sim(&s, 4, 0.6).unwrap();
        // clusters ordered by smallest member: {0}, {1,3}, {2}
        assert_eq!(labels.labels(), &[0, 1, 2, 1]);
        assert_eq!(labels.num_clusters(), 3);
    }

    #[test]
    fn induced_links_are_transitive() {
        // transitivity holds by construction for any labeling; spot-check
        let s = sim_from(&[(0, 1, 0.9), (1, 2, 0.9), (0, 2, 0.55)], 3);
        let labels = flat_upgma_sim(&s, 3, 0.6).unwrap();
        let n = labels.len();
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    if labels.link(i, j) && labels.link(j, k) {
                        assert!(labels.link(i, k));
                    }
                }
            }
        }
    }

    #[test]
    fn higher_threshold_refines_the_cut() {
        let s = sim_from(&[(0, 1, 0.9), (0, 2, 0.5), (1, 2, 0.55), (2, 3, 0.45)], 4);
        let coarse = flat_upgma_sim(&s, 4, 0.4).unwrap();
        let fine = flat_upgma_sim(&s, 4, 0.7).unwrap();
        // every fine cluster sits inside one coarse cluster
        for i in 0..4 {
            for j in 0..4 {
                if fine.link(i, j) {
                    assert!(coarse.link(i, j));
                }
            }
        }
    }

    #[test]
    fn sca_baseline_examples() {
        let mut w = Warnings::new();
        let toks = |s: &str| -> Vec<PhonemeToken> {
            s.split_whitespace()
                .map(|t| PhonemeToken::new(t).unwrap())
                .collect()
        };
        let scheme = ScoringScheme::shipped();
        // identical words cluster together
        let labels = sca_baseline_cluster(
            &[toks("p a t"), toks("p a t")],
            &scheme,
            SCA_BASELINE_THRESHOLD,
            &mut w,
        )
        .unwrap();
        assert_eq!(labels.labels(), &[0, 0]);
        // fully dissimilar class sequences stay singletons
        let labels = sca_baseline_cluster(
            &[toks("p a t"), toks("x u ŋ")],
            &scheme,
            SCA_BASELINE_THRESHOLD,
            &mut w,
        )
        .unwrap();
        assert_eq!(labels.labels(), &[0, 1]);
    }

    #[test]
    fn sca_baseline_matches_distances_fed_to_upgma() {
        let mut w = Warnings::new();
        let toks = |s: &str| -> Vec<PhonemeToken> {
            s.split_whitespace()
                .map(|t| PhonemeToken::new(t).unwrap())
                .collect()
        };
        let scheme = ScoringScheme::shipped();
        let words = [toks("p a t a"), toks("b a d a"), toks("x u ŋ")];
        let d = distance_matrix(&words, &scheme, &mut w).unwrap();
        let n = 3;
        let mut sim = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                sim[i * n + j] = if i == j { 1.0 } else { 1.0 - d[i][j] };
            }
        }
        let direct = flat_upgma_sim(&sim, n, 0.45).unwrap();
        let via = sca_baseline_cluster(&words, &scheme, 0.45, &mut w).unwrap();
        assert_eq!(direct, via);
    }
}
