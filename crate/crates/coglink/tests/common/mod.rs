#![allow(dead_code)] // each test binary compiles its own copy

//! Independent reference implementations ("oracles") used by the
//! acceptance and property suites. Everything here is deliberately
//! naive — plain enumeration and per-definition arithmetic — and shares
//! no code with the implementation paths it checks.

use coglink::alignment::ScoringScheme;
use coglink::phonology::SoundClass;

/// Best global alignment score by enumerating every alignment path
/// (diagonal / gap-in-b / gap-in-a) and scoring gap runs per row as
/// open + (len-1) * extend. No memoization: a genuine exhaustive search,
/// feasible for the short sequences the acceptance criterion uses.
pub fn exhaustive_best_score(a: &[SoundClass], b: &[SoundClass], scheme: &ScoringScheme) -> i32 {
    #[derive(Clone, Copy, PartialEq)]
    enum Last {
        Start,
        Diag,
        GapInB,
        GapInA,
    }
    #[allow(clippy::too_many_arguments)]
    fn go(
        a: &[SoundClass],
        b: &[SoundClass],
        scheme: &ScoringScheme,
        i: usize,
        j: usize,
        last: Last,
        acc: i32,
        best: &mut i32,
    ) {
        if i == a.len() && j == b.len() {
            *best = (*best).max(acc);
            return;
        }
        if i < a.len() && j < b.len() {
            let s = scheme.class_score(a[i], b[j]);
            go(a, b, scheme, i + 1, j + 1, Last::Diag, acc + s, best);
        }
        if i < a.len() {
            let cost = if last == Last::GapInB {
                scheme.gap_extend
            } else {
                scheme.gap_open
            };
            go(a, b, scheme, i + 1, j, Last::GapInB, acc + cost, best);
        }
        if j < b.len() {
            let cost = if last == Last::GapInA {
                scheme.gap_extend
            } else {
                scheme.gap_open
            };
            go(a, b, scheme, i, j + 1, Last::GapInA, acc + cost, best);
        }
    }
    let mut best = i32::MIN;
    go(a, b, scheme, 0, 0, Last::Start, 0, &mut best);
    best
}

/// One naive-UPGMA merge: the member sets joined and the distance at
/// which they joined.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleMerge {
    pub a: Vec<usize>,
    pub b: Vec<usize>,
    pub distance: f64,
}

/// Average-linkage agglomeration that recomputes every inter-cluster
/// distance from the original matrix at every step (the definition of
/// UPGMA, O(r^3) and then some). Ties pick the lexicographically
/// smallest (min-leaf-of-a, min-leaf-of-b) pair. Stops at `cutoff` when
/// given; returns the merges and the final clusters sorted by smallest
/// member.
pub fn naive_upgma(d: &[Vec<f64>], cutoff: Option<f64>) -> (Vec<OracleMerge>, Vec<Vec<usize>>) {
    let n = d.len();
    let mut clusters: Vec<Vec<usize>> = (0..n).map(|i| vec![i]).collect();
    let mut merges = Vec::new();
    while clusters.len() > 1 {
        let mut best: Option<(f64, usize, usize)> = None;
        for x in 0..clusters.len() {
            for y in (x + 1)..clusters.len() {
                let mut total = 0.0;
                for &p in &clusters[x] {
                    for &q in &clusters[y] {
                        total += d[p][q];
                    }
                }
                let mean = total / (clusters[x].len() * clusters[y].len()) as f64;
                // clusters stay sorted by smallest member, so (x, y)
                // order is already the lexicographic tie-break
                if best.is_none_or(|(bv, _, _)| mean < bv) {
                    best = Some((mean, x, y));
                }
            }
        }
        let (dist, x, y) = best.unwrap();
        if let Some(cut) = cutoff {
            if dist > cut {
                break;
            }
        }
        let b = clusters.remove(y);
        let a = clusters[x].clone();
        merges.push(OracleMerge {
            a: a.clone(),
            b: b.clone(),
            distance: dist,
        });
        clusters[x].extend(b);
        clusters[x].sort_unstable();
        clusters.sort_by_key(|c| c[0]);
    }
    clusters.sort_by_key(|c| c[0]);
    (merges, clusters)
}

/// Per-definition B-Cubed: for every item, scan every other item and
/// count co-membership agreements. O(n^2).
pub fn naive_bcubed(items: &[(u32, u32)]) -> (f64, f64, f64) {
    let n = items.len();
    let mut precision = 0.0;
    let mut recall = 0.0;
    for i in 0..n {
        let (gi, pi) = items[i];
        let mut same_pred = 0.0;
        let mut same_gold = 0.0;
        let mut same_both = 0.0;
        for &(gj, pj) in items {
            if pj == pi {
                same_pred += 1.0;
            }
            if gj == gi {
                same_gold += 1.0;
            }
            if pj == pi && gj == gi {
                same_both += 1.0;
            }
        }
        precision += same_both / same_pred;
        recall += same_both / same_gold;
    }
    precision /= n as f64;
    recall /= n as f64;
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    (precision, recall, f1)
}

/// Relative error with an absolute floor: central finite differences in
/// f64 resolve gradients down to roughly 1e-10, so components where both
/// sides sit below the floor compare as equal.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(1e-6);
    (analytic - numeric).abs() / denom
}
