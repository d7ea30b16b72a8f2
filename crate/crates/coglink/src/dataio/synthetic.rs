//! Deterministic synthetic wordlists for end-to-end runs and tests.
//!
//! Two families, each with a fixed set of languages. Every concept holds
//! two or three cognate sets; each set descends from a proto-form drawn
//! from its own consonant-class inventory (so non-cognates are clearly
//! separable), and each language realizes the proto-form through a fixed
//! substitution rule. Several rules cross sound-class boundaries
//! (voicing, lenition, affrication), which plain class-based distance
//! handles imperfectly but a trained model can learn as regular
//! correspondences.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{WordRecord, Wordlist};
use crate::phonology::PhonemeToken;

#[derive(Debug, Clone, Copy)]
pub struct SyntheticSpec {
    pub concepts_per_family: usize,
    pub test_concepts_per_family: usize,
    pub languages_per_family: usize,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            concepts_per_family: 30,
            test_concepts_per_family: 6,
            languages_per_family: 8,
            seed: 2024,
        }
    }
}

const FAMILIES: [&str; 2] = ["SynthA", "SynthB"];

/// Disjoint consonant-class inventories per cognate set.
const INVENTORIES: [(&[&str], &[&str]); 3] = [
    (&["p", "t", "k", "s", "m"], &["a", "i", "u"]),
    (&["b", "d", "g", "z", "n"], &["e", "o", "a"]),
    (&["f", "x", "w", "l", "h"], &["i", "e", "u"]),
];

/// Fixed sound substitutions, one rule per language.
fn apply_rule(rule: usize, token: &str) -> &'static str {
    let table: &[(&str, &str)] = match rule {
        0 => &[],
        // voicing
        1 => &[
            ("p", "b"),
            ("t", "d"),
            ("k", "g"),
            ("s", "z"),
            ("f", "v"),
            ("x", "ɣ"),
        ],
        // lenition
        2 => &[("p", "f"), ("t", "s"), ("k", "x"), ("b", "v"), ("d", "z")],
        // vowel shift plus palatalization
        3 => &[("a", "o"), ("i", "e"), ("u", "o"), ("s", "ʃ"), ("z", "ʒ")],
        // affrication
        4 => &[("k", "tʃ"), ("g", "dʒ"), ("t", "ts"), ("d", "dz")],
        // sonorant and schwa shift
        5 => &[("m", "n"), ("n", "ŋ"), ("l", "r"), ("w", "v"), ("a", "ə")],
        // vowel length (identical after modifier stripping)
        6 => &[("a", "aː"), ("i", "iː"), ("u", "uː"), ("e", "eː"), ("o", "oː")],
        // debuccalization
        7 => &[("s", "h"), ("f", "h"), ("x", "h"), ("k", "ʔ")],
        _ => unreachable!("rule index out of range"),
    };
    table
        .iter()
        .find(|(from, _)| *from == token)
        .map(|(_, to)| *to)
        .unwrap_or_else(|| match token {
            "p" => "p",
            "t" => "t",
            "k" => "k",
            "s" => "s",
            "m" => "m",
            "b" => "b",
            "d" => "d",
            "g" => "g",
            "z" => "z",
            "n" => "n",
            "f" => "f",
            "x" => "x",
            "w" => "w",
            "l" => "l",
            "h" => "h",
            "a" => "a",
            "e" => "e",
            "i" => "i",
            "o" => "o",
            "u" => "u",
            other => panic!("unexpected proto segment {other}"),
        })
}

/// Vowel shifts layered on top of the consonant rules; most cross vowel
/// classes, which class-based distance cannot compensate for.
fn apply_vowel_rule(rule: usize, token: &'static str) -> &'static str {
    let table: &[(&str, &str)] = match rule {
        0 => &[],
        1 => &[("a", "e"), ("i", "e"), ("u", "o")],
        2 => &[("a", "o"), ("e", "i"), ("o", "u")],
        3 => &[("i", "ə"), ("u", "ə"), ("e", "a")],
        _ => unreachable!("vowel rule out of range"),
    };
    table
        .iter()
        .find(|(from, _)| *from == token)
        .map(|(_, to)| *to)
        .unwrap_or(token)
}

fn language_rule(family_idx: usize, lang_idx: usize) -> (usize, usize) {
    if family_idx == 0 {
        (lang_idx % 8, lang_idx % 4)
    } else {
        ((lang_idx * 3 + 1) % 8, (lang_idx + 2) % 4)
    }
}

fn proto_form(rng: &mut ChaCha8Rng, inventory: usize) -> Vec<&'static str> {
    let (cons, vows) = INVENTORIES[inventory];
    let pattern = match rng.gen_range(0..3u8) {
        0 => "CVC",
        1 => "CVCV",
        _ => "CVCVC",
    };
    pattern
        .chars()
        .map(|p| {
            if p == 'C' {
                cons[rng.gen_range(0..cons.len())]
            } else {
                vows[rng.gen_range(0..vows.len())]
            }
        })
        .collect()
}

/// Generate (train, test) wordlists. The last `test_concepts_per_family`
/// concepts of each family are held out.
pub fn generate(spec: &SyntheticSpec) -> (Wordlist, Wordlist) {
    let mut train = Wordlist::default();
    let mut test = Wordlist::default();
    let mut next_id = 1u64;
    for (fi, family) in FAMILIES.iter().enumerate() {
        for ci in 0..spec.concepts_per_family {
            let concept = format!("c{ci:02}");
            let mut rng = ChaCha8Rng::seed_from_u64(
                spec.seed
                    .wrapping_mul(1_000_003)
                    .wrapping_add((fi * 4096 + ci) as u64),
            );
            let n_sets = 2 + rng.gen_range(0..2usize);
            let protos: Vec<Vec<&'static str>> =
                (0..n_sets).map(|s| proto_form(&mut rng, s)).collect();
            let mut assignment: Vec<usize> = (0..spec.languages_per_family)
                .map(|_| rng.gen_range(0..n_sets))
                .collect();
            // every set keeps at least one member
            for s in 0..n_sets {
                assignment[s] = s;
            }

            let is_test = ci >= spec.concepts_per_family - spec.test_concepts_per_family;
            let target = if is_test { &mut test } else { &mut train };
            for li in 0..spec.languages_per_family {
                let set = assignment[li];
                let (cons_rule, vowel_rule) = language_rule(fi, li);
                let tokens: Vec<PhonemeToken> = protos[set]
                    .iter()
                    .map(|seg| {
                        let shifted = apply_vowel_rule(vowel_rule, apply_rule(cons_rule, seg));
                        PhonemeToken::new(shifted).unwrap()
                    })
                    .collect();
                target.records.push(WordRecord {
                    id: next_id,
                    family: family.to_string(),
                    language: format!("{}{li}", if fi == 0 { "alpha" } else { "beta" }),
                    concept: concept.clone(),
                    tokens,
                    cogid: set.to_string(),
                    extra: vec![],
                });
                next_id += 1;
            }
        }
    }
    (train, test)
}
