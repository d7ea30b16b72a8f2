//! Wordlist parsing, serialization, grouping, and the train/test split
//! machinery (moving a seeded fraction of test concepts into training
//! across several random folds).
//!
//! The on-disk format is a header-bearing UTF-8 TSV with the required
//! columns ID, FAMILY, DOCULECT, CONCEPT, TOKENS (space-separated IPA
//! segments), COGID; unknown extra columns are preserved so load/save
//! round-trips byte-identically on normalized files. COGID is an opaque
//! string compared only within a concept.

pub mod synthetic;

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::phonology::PhonemeToken;

pub const REQUIRED_COLUMNS: [&str; 6] = ["ID", "FAMILY", "DOCULECT", "CONCEPT", "TOKENS", "COGID"];
pub const PREDICTION_COLUMN: &str = "PREDICTED_COGID";

#[derive(Debug, Clone, PartialEq)]
pub struct WordRecord {
    pub id: u64,
    pub family: String,
    pub language: String,
    pub concept: String,
    pub tokens: Vec<PhonemeToken>,
    pub cogid: String,
    /// Values of the extra columns, parallel to `Wordlist::extra_columns`.
    pub extra: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Wordlist {
    pub records: Vec<WordRecord>,
    pub extra_columns: Vec<String>,
}

impl Wordlist {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Distinct languages in file order.
    pub fn languages(&self) -> Vec<String> {
        let mut seen = HashSet::new();
        let mut out = Vec::new();
        for r in &self.records {
            if seen.insert(r.language.clone()) {
                out.push(r.language.clone());
            }
        }
        out
    }

    /// Distinct families in file order.
    pub fn families(&self) -> Vec<String> {
        let mut seen = HashSet::new();
        let mut out = Vec::new();
        for r in &self.records {
            if seen.insert(r.family.clone()) {
                out.push(r.family.clone());
            }
        }
        out
    }

    /// Index of an extra column, if present.
    pub fn extra_index(&self, name: &str) -> Option<usize> {
        self.extra_columns.iter().position(|c| c == name)
    }
}

/// Load a wordlist from one TSV file, or from a directory of TSV files
/// (e.g. one per family) merged in filename order. Merged files must
/// share the same column layout and keep ids unique.
pub fn load_wordlist(path: impl AsRef<Path>) -> Result<Wordlist> {
    let path = path.as_ref();
    if path.is_dir() {
        let mut files: Vec<_> = fs::read_dir(path)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|e| e == "tsv"))
            .collect();
        files.sort();
        if files.is_empty() {
            return Err(Error::data(format!(
                "{}: directory holds no .tsv files",
                path.display()
            )));
        }
        let mut merged: Option<Wordlist> = None;
        let mut seen_ids = HashSet::new();
        for file in files {
            let wl = load_wordlist(&file)?;
            for r in &wl.records {
                if !seen_ids.insert(r.id) {
                    return Err(Error::data(format!(
                        "{}: duplicate ID {} across files",
                        file.display(),
                        r.id
                    )));
                }
            }
            match &mut merged {
                None => merged = Some(wl),
                Some(acc) => {
                    if acc.extra_columns != wl.extra_columns {
                        return Err(Error::data(format!(
                            "{}: column layout differs from earlier files",
                            file.display()
                        )));
                    }
                    acc.records.extend(wl.records);
                }
            }
        }
        return Ok(merged.expect("at least one file"));
    }
    let raw = fs::read_to_string(path)
        .map_err(|e| Error::data(format!("{}: {e}", path.display())))?;
    parse_wordlist(&raw, &path.display().to_string())
}

pub fn parse_wordlist(raw: &str, source: &str) -> Result<Wordlist> {
    let mut lines = raw.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| Error::data(format!("{source}: empty file")))?;
    let columns: Vec<&str> = header.trim_end_matches('\r').split('\t').collect();
    let mut pos = HashMap::new();
    for (i, c) in columns.iter().enumerate() {
        pos.insert(*c, i);
    }
    for required in REQUIRED_COLUMNS {
        if !pos.contains_key(required) {
            return Err(Error::data(format!(
                "{source}: missing required column {required}"
            )));
        }
    }
    let extra_columns: Vec<String> = columns
        .iter()
        .filter(|c| !REQUIRED_COLUMNS.contains(c))
        .map(|c| c.to_string())
        .collect();

    let mut records = Vec::new();
    let mut seen_ids = HashSet::new();
    for (lineno, line) in lines {
        let line = line.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != columns.len() {
            return Err(Error::data(format!(
                "{source}:{}: expected {} fields, got {}",
                lineno + 1,
                columns.len(),
                fields.len()
            )));
        }
        let field = |name: &str| fields[pos[name]];
        let id: u64 = field("ID").parse().map_err(|_| {
            Error::data(format!(
                "{source}:{}: ID {:?} is not an integer",
                lineno + 1,
                field("ID")
            ))
        })?;
        if !seen_ids.insert(id) {
            return Err(Error::data(format!(
                "{source}:{}: duplicate ID {id}",
                lineno + 1
            )));
        }
        let tokens_field = field("TOKENS").trim();
        if tokens_field.is_empty() {
            return Err(Error::data(format!(
                "{source}:{}: row has empty TOKENS",
                lineno + 1
            )));
        }
        let tokens: Vec<PhonemeToken> = tokens_field
            .split_whitespace()
            .map(PhonemeToken::new)
            .collect::<Result<_>>()
            .map_err(|e| Error::data(format!("{source}:{}: {e}", lineno + 1)))?;
        let extra = columns
            .iter()
            .filter(|c| !REQUIRED_COLUMNS.contains(c))
            .map(|c| fields[pos[*c]].to_string())
            .collect();
        records.push(WordRecord {
            id,
            family: field("FAMILY").to_string(),
            language: field("DOCULECT").to_string(),
            concept: field("CONCEPT").to_string(),
            tokens,
            cogid: field("COGID").to_string(),
            extra,
        });
    }
    Ok(Wordlist {
        records,
        extra_columns,
    })
}

pub fn format_wordlist(wl: &Wordlist) -> String {
    let mut out = String::new();
    let mut header: Vec<&str> = REQUIRED_COLUMNS.to_vec();
    header.extend(wl.extra_columns.iter().map(String::as_str));
    out.push_str(&header.join("\t"));
    out.push('\n');
    for r in &wl.records {
        let tokens = r
            .tokens
            .iter()
            .map(|t| t.as_str())
            .collect::<Vec<_>>()
            .join(" ");
        let mut fields = vec![
            r.id.to_string(),
            r.family.clone(),
            r.language.clone(),
            r.concept.clone(),
            tokens,
            r.cogid.clone(),
        ];
        fields.extend(r.extra.iter().cloned());
        out.push_str(&fields.join("\t"));
        out.push('\n');
    }
    out
}

pub fn save_wordlist(wl: &Wordlist, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, format_wordlist(wl))?;
    Ok(())
}

/// All words of one concept in one family, in file order.
#[derive(Debug, Clone)]
pub struct ConceptGroup {
    pub family: String,
    pub concept: String,
    /// Indices into the source wordlist's records.
    pub word_indices: Vec<usize>,
}

impl ConceptGroup {
    pub fn words<'a>(&self, wl: &'a Wordlist) -> Vec<&'a WordRecord> {
        self.word_indices.iter().map(|&i| &wl.records[i]).collect()
    }
}

/// Stable grouping by (family, concept), preserving file order both for
/// the groups and within each group. Singleton concepts are retained.
pub fn group_by_concept(wl: &Wordlist) -> Vec<ConceptGroup> {
    let mut order: Vec<(String, String)> = Vec::new();
    let mut map: HashMap<(String, String), Vec<usize>> = HashMap::new();
    for (i, r) in wl.records.iter().enumerate() {
        let key = (r.family.clone(), r.concept.clone());
        match map.get_mut(&key) {
            Some(v) => v.push(i),
            None => {
                map.insert(key.clone(), vec![i]);
                order.push(key);
            }
        }
    }
    order
        .into_iter()
        .map(|key| {
            let word_indices = map.remove(&key).unwrap();
            ConceptGroup {
                family: key.0,
                concept: key.1,
                word_indices,
            }
        })
        .collect()
}

/// How much additional test data to move into training, and over how
/// many random folds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitSpec {
    pub proportion: f64,
    pub folds: usize,
    pub seed: u64,
}

impl SplitSpec {
    pub fn new(proportion: f64, folds: usize, seed: u64) -> Result<Self> {
        if !(0.0..1.0).contains(&proportion) {
            return Err(Error::config("split proportion must be in [0, 1)"));
        }
        if folds == 0 {
            return Err(Error::config("folds must be >= 1"));
        }
        Ok(SplitSpec {
            proportion,
            folds,
            seed,
        })
    }
}

/// Per fold and per test family, move `ceil(p * |concepts|)` seeded
/// random concepts (all their words) from test into train. Proportion 0
/// returns the input split as a single fold.
pub fn augment_split(
    train: &Wordlist,
    test: &Wordlist,
    spec: &SplitSpec,
) -> Vec<(Wordlist, Wordlist)> {
    if spec.proportion == 0.0 {
        return vec![(train.clone(), test.clone())];
    }
    // family -> sorted concept list
    let mut family_concepts: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for r in &test.records {
        let entry = family_concepts.entry(r.family.clone()).or_default();
        if !entry.contains(&r.concept) {
            entry.push(r.concept.clone());
        }
    }
    for concepts in family_concepts.values_mut() {
        concepts.sort();
    }

    (0..spec.folds)
        .map(|fold| {
            let mut rng = ChaCha8Rng::seed_from_u64(
                spec.seed
                    .wrapping_mul(0x9E37_79B9_7F4A_7C15)
                    .wrapping_add(fold as u64),
            );
            let mut moved: HashSet<(String, String)> = HashSet::new();
            for (family, concepts) in &family_concepts {
                let take = (spec.proportion * concepts.len() as f64).ceil() as usize;
                let mut shuffled = concepts.clone();
                shuffled.shuffle(&mut rng);
                for c in shuffled.into_iter().take(take) {
                    moved.insert((family.clone(), c));
                }
            }
            let mut train_out = train.clone();
            let mut test_out = Wordlist {
                records: Vec::new(),
                extra_columns: test.extra_columns.clone(),
            };
            for r in &test.records {
                if moved.contains(&(r.family.clone(), r.concept.clone())) {
                    let mut r = r.clone();
                    // extra columns may differ between the two files
                    r.extra = vec![String::new(); train_out.extra_columns.len()];
                    train_out.records.push(r);
                } else {
                    test_out.records.push(r.clone());
                }
            }
            (train_out, test_out)
        })
        .collect()
}
