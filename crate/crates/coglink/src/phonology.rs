//! Sound representations: IPA segments, sound classes for alignment
//! scoring, conversion to a compact transcription alphabet, and the
//! tokenizer that turns aligned rows into integer id grids.
//!
//! Both lookup tables ship as TSV data files (`data/asjp_map.tsv`,
//! `data/sca_classes.tsv`) compiled into the binary; they are part of the
//! artifact's contract and golden-file tested. Lookups normalize to NFD
//! and strip modifier letters and combining marks first, so `sʲ`, `ɔː`
//! and `kʰ` resolve through their base segments. Unknown segments never
//! abort a run: they degrade to an unknown symbol / fallback class plus a
//! warning, because real wordlists carry transcription noise.

use std::collections::HashMap;
use std::fmt;
use std::sync::LazyLock;

use unicode_normalization::UnicodeNormalization;

use crate::alignment::Msa;
use crate::error::{Error, Result, Warnings};

/// One aligned segment: a single IPA segment (possibly multi-codepoint,
/// e.g. an affricate or a merged vowel cluster) or the gap symbol `-`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PhonemeToken(String);

pub const GAP: &str = "-";

impl PhonemeToken {
    pub fn new(surface: impl Into<String>) -> Result<Self> {
        let surface = surface.into();
        if surface.is_empty() {
            return Err(Error::data("phoneme token must be non-empty"));
        }
        if surface.chars().any(char::is_whitespace) {
            return Err(Error::data(format!(
                "phoneme token {surface:?} contains whitespace"
            )));
        }
        Ok(PhonemeToken(surface))
    }

    pub fn gap() -> Self {
        PhonemeToken(GAP.to_string())
    }

    pub fn is_gap(&self) -> bool {
        self.0 == GAP
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for PhonemeToken {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Kind {
    Consonant,
    Vowel,
    Tone,
    Gap,
}

impl Kind {
    fn parse(s: &str) -> Result<Kind> {
        match s {
            "consonant" => Ok(Kind::Consonant),
            "vowel" => Ok(Kind::Vowel),
            "tone" => Ok(Kind::Tone),
            "gap" => Ok(Kind::Gap),
            other => Err(Error::data(format!("unknown sound-class kind {other:?}"))),
        }
    }
}

/// Coarse sound class used by the alignment scorer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SoundClass {
    pub label: char,
    pub kind: Kind,
}

impl SoundClass {
    pub const GAP: SoundClass = SoundClass {
        label: '-',
        kind: Kind::Gap,
    };
}

/// Fallback class for consonant-like segments the table does not know.
pub const FALLBACK_CLASS: SoundClass = SoundClass {
    label: 'H',
    kind: Kind::Consonant,
};

/// Symbol emitted for segments the transcription table does not know.
pub const UNKNOWN_ASJP: &str = "?";

/// NFD-normalize and drop modifier letters, combining marks and tie bars,
/// keeping tone letters (U+02E5..=U+02E9) intact.
fn strip_modifiers(s: &str) -> String {
    s.nfd()
        .filter(|&c| {
            !(('\u{02B0}'..='\u{02E4}').contains(&c)
                || ('\u{0300}'..='\u{036F}').contains(&c)
                || ('\u{1DC0}'..='\u{1DFF}').contains(&c))
        })
        .collect()
}

fn parse_tsv_rows(raw: &str, file: &str, want_cols: usize) -> Result<Vec<Vec<String>>> {
    let mut rows = Vec::new();
    for (lineno, line) in raw.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let cols: Vec<String> = line.split('\t').map(str::to_string).collect();
        if cols.len() != want_cols {
            return Err(Error::data(format!(
                "{file}:{}: expected {want_cols} tab-separated columns, got {}",
                lineno + 1,
                cols.len()
            )));
        }
        rows.push(cols);
    }
    Ok(rows)
}

/// Many-to-one IPA -> compact-alphabet table.
#[derive(Debug, Clone)]
pub struct AsjpTable {
    map: HashMap<String, String>,
}

impl AsjpTable {
    pub fn from_tsv(raw: &str) -> Result<Self> {
        let mut map = HashMap::new();
        for row in parse_tsv_rows(raw, "asjp_map.tsv", 2)? {
            map.insert(row[0].clone(), row[1].clone());
        }
        Ok(AsjpTable { map })
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    /// Convert one segment. Gap maps to gap; a multi-segment token falls
    /// back to its first base character (so a merged vowel cluster maps
    /// to the symbol of its first vowel); unknown segments map to
    /// [`UNKNOWN_ASJP`] with a warning.
    pub fn convert(&self, token: &PhonemeToken, warnings: &mut Warnings) -> PhonemeToken {
        if token.is_gap() {
            return PhonemeToken::gap();
        }
        if let Some(out) = self.map.get(token.as_str()) {
            return PhonemeToken(out.clone());
        }
        let stripped = strip_modifiers(token.as_str());
        if let Some(out) = self.map.get(&stripped) {
            return PhonemeToken(out.clone());
        }
        if let Some(first) = stripped.chars().next() {
            if let Some(out) = self.map.get(&first.to_string()) {
                return PhonemeToken(out.clone());
            }
        }
        warnings.push(format!(
            "unknown segment {:?} mapped to {UNKNOWN_ASJP:?}",
            token.as_str()
        ));
        PhonemeToken(UNKNOWN_ASJP.to_string())
    }
}

/// Segment -> sound-class table.
#[derive(Debug, Clone)]
pub struct ScaTable {
    map: HashMap<String, SoundClass>,
}

impl ScaTable {
    pub fn from_tsv(raw: &str) -> Result<Self> {
        let mut map = HashMap::new();
        for row in parse_tsv_rows(raw, "sca_classes.tsv", 3)? {
            let label = {
                let mut chars = row[1].chars();
                let c = chars
                    .next()
                    .ok_or_else(|| Error::data("empty class label"))?;
                if chars.next().is_some() {
                    return Err(Error::data(format!(
                        "class label {:?} must be a single character",
                        row[1]
                    )));
                }
                c
            };
            let kind = Kind::parse(&row[2])?;
            map.insert(row[0].clone(), SoundClass { label, kind });
        }
        Ok(ScaTable { map })
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    /// Class of one segment. Gap maps to the gap class; multi-segment
    /// tokens fall back to their first base character; unknown segments
    /// get [`FALLBACK_CLASS`] and a warning.
    pub fn classify(&self, token: &PhonemeToken, warnings: &mut Warnings) -> SoundClass {
        if token.is_gap() {
            return SoundClass::GAP;
        }
        if let Some(&c) = self.map.get(token.as_str()) {
            return c;
        }
        let stripped = strip_modifiers(token.as_str());
        if let Some(&c) = self.map.get(&stripped) {
            return c;
        }
        if let Some(first) = stripped.chars().next() {
            if let Some(&c) = self.map.get(&first.to_string()) {
                return c;
            }
        }
        warnings.push(format!(
            "unknown segment {:?} assigned fallback class {}",
            token.as_str(),
            FALLBACK_CLASS.label
        ));
        FALLBACK_CLASS
    }
}

static ASJP: LazyLock<AsjpTable> = LazyLock::new(|| {
    AsjpTable::from_tsv(include_str!("../data/asjp_map.tsv")).expect("shipped asjp_map.tsv parses")
});

static SCA: LazyLock<ScaTable> = LazyLock::new(|| {
    ScaTable::from_tsv(include_str!("../data/sca_classes.tsv"))
        .expect("shipped sca_classes.tsv parses")
});

pub fn asjp_table() -> &'static AsjpTable {
    &ASJP
}

pub fn sca_table() -> &'static ScaTable {
    &SCA
}

/// Convert one segment with the shipped table.
pub fn ipa_to_asjp(token: &PhonemeToken, warnings: &mut Warnings) -> PhonemeToken {
    ASJP.convert(token, warnings)
}

/// Look up the sound class of one segment with the shipped table.
pub fn sound_class(token: &PhonemeToken, warnings: &mut Warnings) -> SoundClass {
    SCA.classify(token, warnings)
}

/// Combine maximal runs of vowel-kind tokens into single tokens.
/// Input must be gap-free (pre-alignment material).
pub fn merge_consecutive_vowels(
    tokens: &[PhonemeToken],
    warnings: &mut Warnings,
) -> Vec<PhonemeToken> {
    debug_assert!(tokens.iter().all(|t| !t.is_gap()));
    let mut out: Vec<PhonemeToken> = Vec::with_capacity(tokens.len());
    let mut run = String::new();
    for tok in tokens {
        if sound_class(tok, warnings).kind == Kind::Vowel {
            run.push_str(tok.as_str());
        } else {
            if !run.is_empty() {
                out.push(PhonemeToken(std::mem::take(&mut run)));
            }
            out.push(tok.clone());
        }
    }
    if !run.is_empty() {
        out.push(PhonemeToken(run));
    }
    out
}

pub const PAD_ID: u32 = 0;
pub const GAP_ID: u32 = 1;
pub const UNK_ID: u32 = 2;

pub const PAD_TOKEN: &str = "[pad]";
pub const UNK_TOKEN: &str = "[unk]";

pub fn language_token(language: &str) -> String {
    format!("[{language}]")
}

/// Frozen token inventory. Ids are dense in `[0, len)`: PAD, GAP, UNK,
/// then one token per language in lexicographic order, then surface
/// tokens by descending frequency with lexicographic tie-break, capped at
/// `max_size` (overflow surface tokens degrade to UNK at lookup time).
#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    token_to_id: HashMap<String, u32>,
    id_to_token: Vec<String>,
    max_size: usize,
}

impl Vocabulary {
    pub fn build<S: AsRef<str>>(
        surface_tokens: impl IntoIterator<Item = S>,
        languages: &[String],
        max_size: usize,
    ) -> Result<Self> {
        let mut langs: Vec<String> = languages.to_vec();
        langs.sort();
        langs.dedup();

        let mut counts: HashMap<String, u64> = HashMap::new();
        for tok in surface_tokens {
            let tok = tok.as_ref();
            if tok == GAP {
                continue;
            }
            *counts.entry(tok.to_string()).or_insert(0) += 1;
        }

        let mut id_to_token: Vec<String> =
            vec![PAD_TOKEN.to_string(), GAP.to_string(), UNK_TOKEN.to_string()];
        for lang in &langs {
            id_to_token.push(language_token(lang));
        }
        if id_to_token.len() > max_size {
            return Err(Error::config(format!(
                "vocabulary cannot fit {} specials and language tokens under max size {max_size}",
                id_to_token.len()
            )));
        }

        let mut surface: Vec<(String, u64)> = counts
            .into_iter()
            .filter(|(tok, _)| !id_to_token.contains(tok))
            .collect();
        surface.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        for (tok, _) in surface {
            if id_to_token.len() >= max_size {
                break;
            }
            id_to_token.push(tok);
        }

        let token_to_id = id_to_token
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        Ok(Vocabulary {
            token_to_id,
            id_to_token,
            max_size,
        })
    }

    /// Rebuild a vocabulary from an id-ordered token list (checkpoints).
    pub fn from_id_order(tokens: Vec<String>, max_size: usize) -> Result<Self> {
        if tokens.len() < 3
            || tokens[PAD_ID as usize] != PAD_TOKEN
            || tokens[GAP_ID as usize] != GAP
            || tokens[UNK_ID as usize] != UNK_TOKEN
        {
            return Err(Error::checkpoint(
                "vocabulary token list does not start with the reserved specials",
            ));
        }
        let token_to_id = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        Ok(Vocabulary {
            token_to_id,
            id_to_token: tokens,
            max_size,
        })
    }

    pub fn len(&self) -> usize {
        self.id_to_token.len()
    }

    pub fn is_empty(&self) -> bool {
        self.id_to_token.is_empty()
    }

    pub fn max_size(&self) -> usize {
        self.max_size
    }

    /// Id of a surface token; unseen tokens map to UNK.
    pub fn id(&self, token: &str) -> u32 {
        if token == GAP {
            return GAP_ID;
        }
        self.token_to_id.get(token).copied().unwrap_or(UNK_ID)
    }

    /// Id of a language token; unknown languages are an error because the
    /// language inventory is fixed when the vocabulary is built.
    pub fn language_id(&self, language: &str) -> Result<u32> {
        self.token_to_id
            .get(&language_token(language))
            .copied()
            .ok_or_else(|| {
                Error::data(format!(
                    "language {language:?} is not in the vocabulary's language inventory"
                ))
            })
    }

    pub fn token_str(&self, id: u32) -> Option<&str> {
        self.id_to_token.get(id as usize).map(String::as_str)
    }

    pub fn id_ordered_tokens(&self) -> &[String] {
        &self.id_to_token
    }
}

/// Rectangular grid of token ids, PAD = 0.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenGrid {
    rows: usize,
    cols: usize,
    ids: Vec<u32>,
}

impl TokenGrid {
    pub fn new(rows: usize, cols: usize, ids: Vec<u32>) -> Result<Self> {
        if ids.len() != rows * cols {
            return Err(Error::shape(format!(
                "token grid {rows}x{cols} wants {} ids, got {}",
                rows * cols,
                ids.len()
            )));
        }
        Ok(TokenGrid { rows, cols, ids })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, row: usize, col: usize) -> u32 {
        self.ids[row * self.cols + col]
    }

    pub fn set(&mut self, row: usize, col: usize, id: u32) {
        self.ids[row * self.cols + col] = id;
    }

    pub fn ids(&self) -> &[u32] {
        &self.ids
    }

    pub fn row(&self, row: usize) -> &[u32] {
        &self.ids[row * self.cols..(row + 1) * self.cols]
    }
}

/// Map an MSA to an `r x (c+1)` id grid: each row starts with its
/// language token, followed by the ids of its aligned segments.
pub fn tokenize_msa(msa: &Msa, languages: &[String], vocab: &Vocabulary) -> Result<TokenGrid> {
    let r = msa.num_rows();
    if languages.len() != r {
        return Err(Error::shape(format!(
            "MSA has {r} rows but {} languages were supplied",
            languages.len()
        )));
    }
    let c = msa.num_cols();
    let mut ids = Vec::with_capacity(r * (c + 1));
    for (i, lang) in languages.iter().enumerate() {
        ids.push(vocab.language_id(lang)?);
        for tok in msa.row(i) {
            ids.push(vocab.id(tok.as_str()));
        }
    }
    TokenGrid::new(r, if r == 0 { 0 } else { c + 1 }, ids)
}
