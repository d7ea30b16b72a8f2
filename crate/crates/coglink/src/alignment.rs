//! Sound-class progressive multiple sequence alignment.
//!
//! Pairwise alignments are global Needleman-Wunsch with affine gaps and
//! sound-class scoring; words are merged progressively along a UPGMA
//! guide tree built from normalized pairwise distances. Tie-breaking in
//! both the DP traceback (diagonal over up over left) and the UPGMA
//! merge order (lexicographically smallest slot pair) is deterministic,
//! so alignments are reproducible across runs and platforms.

use crate::error::{Error, Result, Warnings};
use crate::phonology::{sound_class, Kind, PhonemeToken, SoundClass};

/// Integer scores over sound classes plus affine gap penalties.
///
/// Same class scores highest, a same-kind mismatch lower, and a
/// cross-kind mismatch (e.g. consonant against vowel) lowest.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScoringScheme {
    pub match_score: i32,
    pub same_kind_score: i32,
    pub cross_kind_score: i32,
    pub gap_open: i32,
    pub gap_extend: i32,
}

impl ScoringScheme {
    pub fn new(
        match_score: i32,
        same_kind_score: i32,
        cross_kind_score: i32,
        gap_open: i32,
        gap_extend: i32,
    ) -> Result<Self> {
        if match_score <= same_kind_score || cross_kind_score > same_kind_score {
            return Err(Error::config(
                "scoring must order match > same-kind mismatch >= cross-kind mismatch",
            ));
        }
        if gap_open > 0 || gap_extend > 0 {
            return Err(Error::config("gap penalties must be <= 0"));
        }
        Ok(ScoringScheme {
            match_score,
            same_kind_score,
            cross_kind_score,
            gap_open,
            gap_extend,
        })
    }

    /// The shipped default: match +5, same-kind mismatch -1, cross-kind
    /// mismatch -5, gap open -4, gap extend -1. A same-kind mismatch
    /// costs slightly more than extending a gap on both rows, so the
    /// aligner prefers exact class matches plus gaps over stacking
    /// unrelated consonants.
    pub fn shipped() -> Self {
        ScoringScheme {
            match_score: 5,
            same_kind_score: -1,
            cross_kind_score: -5,
            gap_open: -4,
            gap_extend: -1,
        }
    }

    /// Unit match/mismatch/gap scores, handy for worked examples.
    pub fn unit() -> Self {
        ScoringScheme {
            match_score: 1,
            same_kind_score: -1,
            cross_kind_score: -1,
            gap_open: -1,
            gap_extend: -1,
        }
    }

    pub fn class_score(&self, a: SoundClass, b: SoundClass) -> i32 {
        debug_assert!(a.kind != Kind::Gap && b.kind != Kind::Gap);
        if a == b {
            self.match_score
        } else if a.kind == b.kind {
            self.same_kind_score
        } else {
            self.cross_kind_score
        }
    }

    /// Score of a maximal gap run of the given length.
    pub fn gap_run(&self, len: usize) -> i32 {
        if len == 0 {
            0
        } else {
            self.gap_open + (len as i32 - 1) * self.gap_extend
        }
    }
}

/// A global pairwise alignment: both rows padded with gaps to equal
/// length, no gap-gap column.
#[derive(Debug, Clone, PartialEq)]
pub struct PairwiseAlignment {
    pub row_a: Vec<PhonemeToken>,
    pub row_b: Vec<PhonemeToken>,
    pub score: i32,
    pub normalized_distance: f64,
}

const NEG: i32 = i32::MIN / 4;

struct AffineDp {
    m: Vec<Vec<i32>>,
    x: Vec<Vec<i32>>, // column (a_i, -): gap in row b
    y: Vec<Vec<i32>>, // column (-, b_j): gap in row a
}

fn affine_dp(ca: &[SoundClass], cb: &[SoundClass], scheme: &ScoringScheme) -> AffineDp {
    let (m, n) = (ca.len(), cb.len());
    let mut dp = AffineDp {
        m: vec![vec![NEG; n + 1]; m + 1],
        x: vec![vec![NEG; n + 1]; m + 1],
        y: vec![vec![NEG; n + 1]; m + 1],
    };
    dp.m[0][0] = 0;
    for i in 1..=m {
        dp.x[i][0] = scheme.gap_run(i);
    }
    for j in 1..=n {
        dp.y[0][j] = scheme.gap_run(j);
    }
    for i in 1..=m {
        for j in 1..=n {
            let sub = scheme.class_score(ca[i - 1], cb[j - 1]);
            dp.m[i][j] = sub
                + dp.m[i - 1][j - 1]
                    .max(dp.x[i - 1][j - 1])
                    .max(dp.y[i - 1][j - 1]);
            dp.x[i][j] = (dp.m[i - 1][j] + scheme.gap_open)
                .max(dp.x[i - 1][j] + scheme.gap_extend)
                .max(dp.y[i - 1][j] + scheme.gap_open);
            dp.y[i][j] = (dp.m[i][j - 1] + scheme.gap_open)
                .max(dp.x[i][j - 1] + scheme.gap_open)
                .max(dp.y[i][j - 1] + scheme.gap_extend);
        }
    }
    dp
}

#[derive(Clone, Copy, PartialEq)]
enum State {
    Diag,
    Up,
    Left,
}

/// Traceback through the affine DP, preferring diagonal over up over left
/// at every tie. Returns per-column choices from left to right.
fn affine_traceback(dp: &AffineDp, scheme: &ScoringScheme) -> Vec<State> {
    let m = dp.m.len() - 1;
    let n = dp.m[0].len() - 1;
    let mut states = Vec::new();
    let (mut i, mut j) = (m, n);
    let mut state = {
        let (sm, sx, sy) = (dp.m[m][n], dp.x[m][n], dp.y[m][n]);
        let best = sm.max(sx).max(sy);
        if sm == best {
            State::Diag
        } else if sx == best {
            State::Up
        } else {
            State::Left
        }
    };
    while i > 0 || j > 0 {
        match state {
            State::Diag => {
                states.push(State::Diag);
                let target = dp.m[i][j];
                let prev = (dp.m[i - 1][j - 1], dp.x[i - 1][j - 1], dp.y[i - 1][j - 1]);
                let sub = target - prev.0.max(prev.1).max(prev.2);
                let want = target - sub;
                state = if prev.0 == want {
                    State::Diag
                } else if prev.1 == want {
                    State::Up
                } else {
                    State::Left
                };
                i -= 1;
                j -= 1;
            }
            State::Up => {
                states.push(State::Up);
                let target = dp.x[i][j];
                state = if dp.m[i - 1][j] + scheme.gap_open == target {
                    State::Diag
                } else if dp.x[i - 1][j] + scheme.gap_extend == target {
                    State::Up
                } else {
                    State::Left
                };
                i -= 1;
            }
            State::Left => {
                states.push(State::Left);
                let target = dp.y[i][j];
                state = if dp.m[i][j - 1] + scheme.gap_open == target {
                    State::Diag
                } else if dp.x[i][j - 1] + scheme.gap_open == target {
                    State::Up
                } else {
                    State::Left
                };
                j -= 1;
            }
        }
    }
    states.reverse();
    states
}

fn classify_word(word: &[PhonemeToken], warnings: &mut Warnings) -> Result<Vec<SoundClass>> {
    if word.is_empty() {
        return Err(Error::data("cannot align an empty word"));
    }
    if word.iter().any(|t| t.is_gap()) {
        return Err(Error::data("alignment input must be gap-free"));
    }
    Ok(word.iter().map(|t| sound_class(t, warnings)).collect())
}

/// Distance in [0, 1]: 0 for a perfect self-like alignment, 1 at the
/// all-gap worst case. `best` is the mean of the two self-alignment
/// scores, `worst` the score of aligning both words entirely to gaps.
fn normalize_distance(score: i32, ca: &[SoundClass], cb: &[SoundClass], scheme: &ScoringScheme) -> f64 {
    let self_a: i32 = ca.iter().map(|&c| scheme.class_score(c, c)).sum();
    let self_b: i32 = cb.iter().map(|&c| scheme.class_score(c, c)).sum();
    let best = (self_a + self_b) as f64 / 2.0;
    let worst = (scheme.gap_run(ca.len()) + scheme.gap_run(cb.len())) as f64;
    if best <= worst {
        return 0.0;
    }
    (1.0 - (score as f64 - worst) / (best - worst)).clamp(0.0, 1.0)
}

/// Global affine-gap alignment of two gap-free words.
pub fn pairwise_align(
    a: &[PhonemeToken],
    b: &[PhonemeToken],
    scheme: &ScoringScheme,
    warnings: &mut Warnings,
) -> Result<PairwiseAlignment> {
    let ca = classify_word(a, warnings)?;
    let cb = classify_word(b, warnings)?;
    let dp = affine_dp(&ca, &cb, scheme);
    let score = dp.m[ca.len()][cb.len()]
        .max(dp.x[ca.len()][cb.len()])
        .max(dp.y[ca.len()][cb.len()]);
    let states = affine_traceback(&dp, scheme);
    let mut row_a = Vec::with_capacity(states.len());
    let mut row_b = Vec::with_capacity(states.len());
    let (mut i, mut j) = (0usize, 0usize);
    for s in states {
        match s {
            State::Diag => {
                row_a.push(a[i].clone());
                row_b.push(b[j].clone());
                i += 1;
                j += 1;
            }
            State::Up => {
                row_a.push(a[i].clone());
                row_b.push(PhonemeToken::gap());
                i += 1;
            }
            State::Left => {
                row_a.push(PhonemeToken::gap());
                row_b.push(b[j].clone());
                j += 1;
            }
        }
    }
    let normalized_distance = normalize_distance(score, &ca, &cb, scheme);
    Ok(PairwiseAlignment {
        row_a,
        row_b,
        score,
        normalized_distance,
    })
}

/// Alignment score only (no traceback); used for distance matrices.
pub fn alignment_score(
    ca: &[SoundClass],
    cb: &[SoundClass],
    scheme: &ScoringScheme,
) -> i32 {
    let dp = affine_dp(ca, cb, scheme);
    dp.m[ca.len()][cb.len()]
        .max(dp.x[ca.len()][cb.len()])
        .max(dp.y[ca.len()][cb.len()])
}

/// Symmetric zero-diagonal matrix of normalized pairwise distances.
pub fn distance_matrix(
    words: &[Vec<PhonemeToken>],
    scheme: &ScoringScheme,
    warnings: &mut Warnings,
) -> Result<Vec<Vec<f64>>> {
    let r = words.len();
    if r == 0 {
        return Err(Error::data("distance matrix needs at least one word"));
    }
    let classes: Vec<Vec<SoundClass>> = words
        .iter()
        .map(|w| classify_word(w, warnings))
        .collect::<Result<_>>()?;
    let mut d = vec![vec![0.0; r]; r];
    for i in 0..r {
        for j in (i + 1)..r {
            let score = alignment_score(&classes[i], &classes[j], scheme);
            let nd = normalize_distance(score, &classes[i], &classes[j], scheme);
            d[i][j] = nd;
            d[j][i] = nd;
        }
    }
    Ok(d)
}

/// Binary guide tree with UPGMA merge heights.
#[derive(Debug, Clone, PartialEq)]
pub enum GuideTree {
    Leaf(usize),
    Node {
        left: Box<GuideTree>,
        right: Box<GuideTree>,
        height: f64,
    },
}

impl GuideTree {
    pub fn leaves(&self) -> Vec<usize> {
        let mut out = Vec::new();
        self.collect_leaves(&mut out);
        out
    }

    fn collect_leaves(&self, out: &mut Vec<usize>) {
        match self {
            GuideTree::Leaf(i) => out.push(*i),
            GuideTree::Node { left, right, .. } => {
                left.collect_leaves(out);
                right.collect_leaves(out);
            }
        }
    }

    pub fn height(&self) -> f64 {
        match self {
            GuideTree::Leaf(_) => 0.0,
            GuideTree::Node { height, .. } => *height,
        }
    }
}

/// One agglomeration step: slots `i < j` merged at `distance` into slot `i`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Merge {
    pub i: usize,
    pub j: usize,
    pub distance: f64,
}

/// Average-linkage agglomeration with cluster-size weighting over a full
/// distance matrix. Stops early when the smallest inter-cluster distance
/// exceeds `cutoff` (if given). Merge ties break on the lexicographically
/// smallest slot pair; since a merged cluster keeps the smaller slot, a
/// slot index is always the smallest original index in its cluster.
pub fn agglomerate(d: &[Vec<f64>], cutoff: Option<f64>) -> (Vec<Merge>, Vec<Vec<usize>>) {
    let r = d.len();
    let mut dist: Vec<Vec<f64>> = d.to_vec();
    let mut active: Vec<bool> = vec![true; r];
    let mut size: Vec<usize> = vec![1; r];
    let mut members: Vec<Vec<usize>> = (0..r).map(|i| vec![i]).collect();
    let mut merges = Vec::new();

    for _ in 1..r {
        let mut best: Option<(f64, usize, usize)> = None;
        for i in 0..r {
            if !active[i] {
                continue;
            }
            for j in (i + 1)..r {
                if !active[j] {
                    continue;
                }
                let v = dist[i][j];
                match best {
                    Some((bv, _, _)) if v >= bv => {}
                    _ => best = Some((v, i, j)),
                }
            }
        }
        let Some((v, i, j)) = best else { break };
        if let Some(cut) = cutoff {
            if v > cut {
                break;
            }
        }
        merges.push(Merge {
            i,
            j,
            distance: v,
        });
        let (si, sj) = (size[i] as f64, size[j] as f64);
        for k in 0..r {
            if !active[k] || k == i || k == j {
                continue;
            }
            let nd = (dist[i][k] * si + dist[j][k] * sj) / (si + sj);
            dist[i][k] = nd;
            dist[k][i] = nd;
        }
        size[i] += size[j];
        active[j] = false;
        let moved = std::mem::take(&mut members[j]);
        members[i].extend(moved);
    }

    let clusters: Vec<Vec<usize>> = (0..r)
        .filter(|&i| active[i])
        .map(|i| {
            let mut m = members[i].clone();
            m.sort_unstable();
            m
        })
        .collect();
    (merges, clusters)
}

fn validate_distance_matrix(d: &[Vec<f64>]) -> Result<()> {
    let r = d.len();
    if r == 0 {
        return Err(Error::data("UPGMA needs at least one item"));
    }
    for (i, row) in d.iter().enumerate() {
        if row.len() != r {
            return Err(Error::shape("distance matrix must be square"));
        }
        if d[i][i] != 0.0 {
            return Err(Error::data("distance matrix must have a zero diagonal"));
        }
        for j in 0..r {
            if d[i][j] < 0.0 || (d[i][j] - d[j][i]).abs() > 1e-9 {
                return Err(Error::data(
                    "distance matrix must be symmetric and non-negative",
                ));
            }
        }
    }
    Ok(())
}

/// Standard UPGMA tree over a distance matrix; merge height is half the
/// inter-cluster distance at merge time.
pub fn upgma_tree(d: &[Vec<f64>]) -> Result<GuideTree> {
    validate_distance_matrix(d)?;
    let r = d.len();
    let (merges, _) = agglomerate(d, None);
    let mut slots: Vec<Option<GuideTree>> = (0..r).map(|i| Some(GuideTree::Leaf(i))).collect();
    for m in merges {
        let left = slots[m.i].take().expect("slot holds a subtree");
        let right = slots[m.j].take().expect("slot holds a subtree");
        slots[m.i] = Some(GuideTree::Node {
            left: Box::new(left),
            right: Box::new(right),
            height: m.distance / 2.0,
        });
    }
    Ok(slots
        .into_iter()
        .flatten()
        .next()
        .expect("one root remains"))
}

/// Rectangular grid of aligned tokens; `word_indices[i]` names the source
/// word of row `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct Msa {
    rows: Vec<Vec<PhonemeToken>>,
    word_indices: Vec<usize>,
}

impl Msa {
    pub fn from_rows(rows: Vec<Vec<PhonemeToken>>, word_indices: Vec<usize>) -> Result<Self> {
        if rows.len() != word_indices.len() {
            return Err(Error::shape("row metadata length mismatch"));
        }
        if let Some(first) = rows.first() {
            let c = first.len();
            if rows.iter().any(|r| r.len() != c) {
                return Err(Error::shape("MSA rows must have equal length"));
            }
        }
        Ok(Msa { rows, word_indices })
    }

    pub fn num_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn num_cols(&self) -> usize {
        self.rows.first().map_or(0, Vec::len)
    }

    pub fn row(&self, i: usize) -> &[PhonemeToken] {
        &self.rows[i]
    }

    pub fn rows(&self) -> &[Vec<PhonemeToken>] {
        &self.rows
    }

    pub fn word_indices(&self) -> &[usize] {
        &self.word_indices
    }

    /// Row with gaps removed (the source word if invariants hold).
    pub fn ungapped_row(&self, i: usize) -> Vec<PhonemeToken> {
        self.rows[i]
            .iter()
            .filter(|t| !t.is_gap())
            .cloned()
            .collect()
    }

    /// Apply a token mapping to every cell (gaps included).
    pub fn map_tokens(
        &self,
        mut f: impl FnMut(&PhonemeToken) -> PhonemeToken,
    ) -> Msa {
        Msa {
            rows: self
                .rows
                .iter()
                .map(|row| row.iter().map(&mut f).collect())
                .collect(),
            word_indices: self.word_indices.clone(),
        }
    }
}

struct Profile {
    word_indices: Vec<usize>,
    rows: Vec<Vec<PhonemeToken>>,
    class_rows: Vec<Vec<SoundClass>>,
}

impl Profile {
    fn singleton(idx: usize, word: &[PhonemeToken], classes: Vec<SoundClass>) -> Self {
        Profile {
            word_indices: vec![idx],
            rows: vec![word.to_vec()],
            class_rows: vec![classes],
        }
    }

    fn num_cols(&self) -> usize {
        self.rows.first().map_or(0, Vec::len)
    }
}

/// Mean class score over non-gap member pairs of two profile columns.
fn profile_column_score(a: &Profile, ca: usize, b: &Profile, cb: usize, scheme: &ScoringScheme) -> f64 {
    let mut total = 0i64;
    let mut count = 0i64;
    for row_a in &a.class_rows {
        let x = row_a[ca];
        if x.kind == Kind::Gap {
            continue;
        }
        for row_b in &b.class_rows {
            let y = row_b[cb];
            if y.kind == Kind::Gap {
                continue;
            }
            total += scheme.class_score(x, y) as i64;
            count += 1;
        }
    }
    if count == 0 {
        // all-gap columns cannot arise from progressive merging
        debug_assert!(false, "all-gap profile column");
        return scheme.gap_open as f64;
    }
    total as f64 / count as f64
}

fn align_profiles(a: Profile, b: Profile, scheme: &ScoringScheme) -> Profile {
    let (m, n) = (a.num_cols(), b.num_cols());
    let neg = f64::NEG_INFINITY;
    let open = scheme.gap_open as f64;
    let extend = scheme.gap_extend as f64;

    let mut dm = vec![vec![neg; n + 1]; m + 1];
    let mut dx = vec![vec![neg; n + 1]; m + 1];
    let mut dy = vec![vec![neg; n + 1]; m + 1];
    dm[0][0] = 0.0;
    for i in 1..=m {
        dx[i][0] = open + (i as f64 - 1.0) * extend;
    }
    for j in 1..=n {
        dy[0][j] = open + (j as f64 - 1.0) * extend;
    }
    for i in 1..=m {
        for j in 1..=n {
            let sub = profile_column_score(&a, i - 1, &b, j - 1, scheme);
            dm[i][j] = sub + dm[i - 1][j - 1].max(dx[i - 1][j - 1]).max(dy[i - 1][j - 1]);
            dx[i][j] = (dm[i - 1][j] + open)
                .max(dx[i - 1][j] + extend)
                .max(dy[i - 1][j] + open);
            dy[i][j] = (dm[i][j - 1] + open)
                .max(dx[i][j - 1] + open)
                .max(dy[i][j - 1] + extend);
        }
    }

    // traceback, diagonal over up over left
    let (mut i, mut j) = (m, n);
    let mut state = {
        let best = dm[m][n].max(dx[m][n]).max(dy[m][n]);
        if dm[m][n] == best {
            State::Diag
        } else if dx[m][n] == best {
            State::Up
        } else {
            State::Left
        }
    };
    let mut cols: Vec<(Option<usize>, Option<usize>)> = Vec::new();
    while i > 0 || j > 0 {
        match state {
            State::Diag => {
                cols.push((Some(i - 1), Some(j - 1)));
                let target = dm[i][j] - profile_column_score(&a, i - 1, &b, j - 1, scheme);
                state = pick_state(dm[i - 1][j - 1], dx[i - 1][j - 1], dy[i - 1][j - 1], target);
                i -= 1;
                j -= 1;
            }
            State::Up => {
                cols.push((Some(i - 1), None));
                let target = dx[i][j];
                state = pick_state(
                    dm[i - 1][j] + open,
                    dx[i - 1][j] + extend,
                    dy[i - 1][j] + open,
                    target,
                );
                i -= 1;
            }
            State::Left => {
                cols.push((None, Some(j - 1)));
                let target = dy[i][j];
                state = pick_state(
                    dm[i][j - 1] + open,
                    dx[i][j - 1] + open,
                    dy[i][j - 1] + extend,
                    target,
                );
                j -= 1;
            }
        }
    }
    cols.reverse();

    let gather_tokens = |rows: &[Vec<PhonemeToken>], side: usize| -> Vec<Vec<PhonemeToken>> {
        rows.iter()
            .map(|row| {
                cols.iter()
                    .map(|&(ia, ib)| {
                        let pick = if side == 0 { ia } else { ib };
                        match pick {
                            Some(c) => row[c].clone(),
                            None => PhonemeToken::gap(),
                        }
                    })
                    .collect()
            })
            .collect()
    };
    let gather_classes = |rows: &[Vec<SoundClass>], side: usize| -> Vec<Vec<SoundClass>> {
        rows.iter()
            .map(|row| {
                cols.iter()
                    .map(|&(ia, ib)| {
                        let pick = if side == 0 { ia } else { ib };
                        match pick {
                            Some(c) => row[c],
                            None => SoundClass::GAP,
                        }
                    })
                    .collect()
            })
            .collect()
    };

    let mut rows = gather_tokens(&a.rows, 0);
    rows.extend(gather_tokens(&b.rows, 1));
    let mut class_rows = gather_classes(&a.class_rows, 0);
    class_rows.extend(gather_classes(&b.class_rows, 1));
    let mut word_indices = a.word_indices;
    word_indices.extend(b.word_indices);
    Profile {
        word_indices,
        rows,
        class_rows,
    }
}

fn pick_state(diag: f64, up: f64, left: f64, target: f64) -> State {
    // f64 recomputation noise: compare with a small slack, diagonal first
    let eps = 1e-9;
    if (diag - target).abs() <= eps {
        State::Diag
    } else if (up - target).abs() <= eps {
        State::Up
    } else {
        debug_assert!((left - target).abs() <= eps);
        State::Left
    }
}

fn align_subtree(
    tree: &GuideTree,
    words: &[Vec<PhonemeToken>],
    classes: &[Vec<SoundClass>],
    scheme: &ScoringScheme,
) -> Profile {
    match tree {
        GuideTree::Leaf(i) => Profile::singleton(*i, &words[*i], classes[*i].clone()),
        GuideTree::Node { left, right, .. } => {
            let a = align_subtree(left, words, classes, scheme);
            let b = align_subtree(right, words, classes, scheme);
            align_profiles(a, b, scheme)
        }
    }
}

/// Progressive alignment of `words` along `tree`. Output rows are in
/// word-index order regardless of the traversal.
pub fn progressive_msa(
    words: &[Vec<PhonemeToken>],
    tree: &GuideTree,
    scheme: &ScoringScheme,
    warnings: &mut Warnings,
) -> Result<Msa> {
    let mut leaves = tree.leaves();
    leaves.sort_unstable();
    if leaves != (0..words.len()).collect::<Vec<_>>() {
        return Err(Error::data(
            "guide tree leaves must cover exactly the input words",
        ));
    }
    let classes: Vec<Vec<SoundClass>> = words
        .iter()
        .map(|w| classify_word(w, warnings))
        .collect::<Result<_>>()?;
    let profile = align_subtree(tree, words, &classes, scheme);

    // reorder rows to original word order
    let mut order: Vec<usize> = (0..profile.word_indices.len()).collect();
    order.sort_by_key(|&i| profile.word_indices[i]);
    let mut rows: Vec<Vec<PhonemeToken>> = order
        .iter()
        .map(|&i| profile.rows[i].clone())
        .collect();
    let word_indices: Vec<usize> = order.iter().map(|&i| profile.word_indices[i]).collect();

    // drop any all-gap columns (cannot normally arise; cheap to enforce)
    let num_cols = rows.first().map_or(0, Vec::len);
    let keep: Vec<usize> = (0..num_cols)
        .filter(|&c| rows.iter().any(|r| !r[c].is_gap()))
        .collect();
    if keep.len() != num_cols {
        rows = rows
            .into_iter()
            .map(|row| keep.iter().map(|&c| row[c].clone()).collect())
            .collect();
    }

    Msa::from_rows(rows, word_indices)
}

/// Convenience wrapper: distances, guide tree, then progressive merge.
pub fn align_concept(
    words: &[Vec<PhonemeToken>],
    scheme: &ScoringScheme,
    warnings: &mut Warnings,
) -> Result<Msa> {
    let d = distance_matrix(words, scheme, warnings)?;
    let tree = upgma_tree(&d)?;
    progressive_msa(words, &tree, scheme, warnings)
}
