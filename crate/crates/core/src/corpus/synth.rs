//! Template-grammar corpus generator with low-level style transforms.
//!
//! A base sentence is `subject + verb group + object + optional adjunct`.
//! Each requested style applies one transform (or a `+`-joined chain of
//! transforms) to base sentences; the untouched sentences form the
//! [`ORIGINAL_STYLE`]. The grammar never produces the words a transform
//! introduces, so every transformed style is separable from the original by
//! a single token-level feature.

use std::collections::HashSet;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{stratified_assignment, StyleCorpus, DEFAULT_SPLIT_RATIOS};
use crate::error::{config, Error, Result};

pub const ORIGINAL_STYLE: &str = "original";

pub const TRANSFORM_NAMES: [&str; 4] = ["to_future_tense", "info_addition", "formal_marker", "contraction"];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n_base_sentences: usize,
    /// Transform names, or `+`-joined compositions such as
    /// `to_future_tense+formal_marker`.
    pub styles_requested: Vec<String>,
    pub sentences_per_style: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_base_sentences: 400,
            styles_requested: vec!["to_future_tense".into()],
            sentences_per_style: 250,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Transform {
    /// `is planning` → `will be planning`, `did X` → `will do X`.
    FutureTense,
    /// Emphasis after the auxiliary: `did perform`, `is actively`.
    InfoAddition,
    /// Appends `, if you please`.
    FormalMarker,
    /// `it is` → `it's`, `they are` → `they're`, ...
    Contraction,
}

impl FromStr for Transform {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "to_future_tense" => Ok(Transform::FutureTense),
            "info_addition" => Ok(Transform::InfoAddition),
            "formal_marker" => Ok(Transform::FormalMarker),
            "contraction" => Ok(Transform::Contraction),
            other => Err(config(format!("unknown transform {other:?}; known: {}", TRANSFORM_NAMES.join(", ")))),
        }
    }
}

const BE_AUX: [&str; 5] = ["is", "are", "am", "was", "were"];
const DO_AUX: [&str; 3] = ["did", "does", "do"];

const CONTRACTIONS: [(&str, &str, &str); 16] = [
    ("it", "is", "it's"),
    ("he", "is", "he's"),
    ("she", "is", "she's"),
    ("that", "is", "that's"),
    ("there", "is", "there's"),
    ("what", "is", "what's"),
    ("they", "are", "they're"),
    ("we", "are", "we're"),
    ("you", "are", "you're"),
    ("i", "am", "i'm"),
    ("is", "not", "isn't"),
    ("are", "not", "aren't"),
    ("do", "not", "don't"),
    ("did", "not", "didn't"),
    ("will", "not", "won't"),
    ("can", "not", "can't"),
];

/// Lowercased word with trailing punctuation removed.
fn bare(word: &str) -> String {
    word.trim_end_matches(|c: char| c.is_ascii_punctuation() && c != '\'').to_lowercase()
}

fn words(text: &str) -> Vec<String> {
    text.split_whitespace().map(str::to_string).collect()
}

fn first_aux(ws: &[String]) -> Option<(usize, bool)> {
    ws.iter().enumerate().find_map(|(i, w)| {
        let b = bare(w);
        if BE_AUX.contains(&b.as_str()) {
            Some((i, true))
        } else if DO_AUX.contains(&b.as_str()) {
            Some((i, false))
        } else {
            None
        }
    })
}

fn match_case(template: &str, replacement: &str) -> String {
    let mut chars = replacement.chars();
    match (template.chars().next(), chars.next()) {
        (Some(t), Some(first)) if t.is_uppercase() => first.to_uppercase().chain(chars).collect(),
        _ => replacement.to_string(),
    }
}

impl Transform {
    pub fn name(self) -> &'static str {
        match self {
            Transform::FutureTense => "to_future_tense",
            Transform::InfoAddition => "info_addition",
            Transform::FormalMarker => "formal_marker",
            Transform::Contraction => "contraction",
        }
    }

    /// Rewrites `text`, or returns `None` when the transform does not apply.
    pub fn apply(self, text: &str) -> Option<String> {
        let mut ws = words(text);
        if ws.is_empty() {
            return None;
        }
        match self {
            Transform::FutureTense => {
                if ws.iter().any(|w| bare(w) == "will") {
                    return None;
                }
                let (i, is_be) = first_aux(&ws)?;
                let replacement = if is_be {
                    "will be"
                } else if ws.get(i + 1).is_some_and(|w| bare(w) == "perform") {
                    "will"
                } else {
                    "will do"
                };
                ws[i] = match_case(&ws[i], replacement);
            }
            Transform::InfoAddition => {
                if ws.iter().any(|w| matches!(bare(w).as_str(), "perform" | "actively")) {
                    return None;
                }
                let (i, is_be) = first_aux(&ws)?;
                if i + 1 >= ws.len() || ws[i].ends_with(|c: char| c.is_ascii_punctuation()) {
                    return None;
                }
                ws.insert(i + 1, if is_be { "actively" } else { "perform" }.to_string());
            }
            Transform::FormalMarker => {
                if ws.iter().any(|w| bare(w) == "please") {
                    return None;
                }
                let last = ws.last_mut().unwrap();
                let end = match last.chars().last() {
                    Some(c @ ('.' | '!' | '?')) => {
                        last.pop();
                        c.to_string()
                    }
                    _ => String::new(),
                };
                if last.is_empty() {
                    ws.pop();
                }
                let last = ws.last_mut()?;
                last.push(',');
                ws.push("if".into());
                ws.push("you".into());
                ws.push(format!("please{end}"));
            }
            Transform::Contraction => {
                let mut out = Vec::with_capacity(ws.len());
                let mut changed = false;
                let mut i = 0;
                while i < ws.len() {
                    if i + 1 < ws.len() && !ws[i].ends_with(|c: char| c.is_ascii_punctuation()) {
                        let (a, b) = (bare(&ws[i]), bare(&ws[i + 1]));
                        if let Some((_, _, joined)) = CONTRACTIONS.iter().find(|(x, y, _)| *x == a && *y == b) {
                            let tail: String = ws[i + 1].chars().skip_while(|c| !c.is_ascii_punctuation()).collect();
                            let mut joined = match_case(&ws[i], joined);
                            if joined == "i'm" {
                                joined = "I'm".into();
                            }
                            out.push(joined + &tail);
                            changed = true;
                            i += 2;
                            continue;
                        }
                    }
                    out.push(ws[i].clone());
                    i += 1;
                }
                if !changed {
                    return None;
                }
                ws = out;
            }
        }
        Some(ws.join(" "))
    }
}

fn parse_recipe(style: &str) -> Result<Vec<Transform>> {
    style.split('+').map(|part| part.trim().parse()).collect()
}

/// Applies a named style (a transform, a `+`-composition, or
/// [`ORIGINAL_STYLE`]) to `text`. `Ok(None)` means the style does not apply.
pub fn apply_style(style: &str, text: &str) -> Result<Option<String>> {
    if style == ORIGINAL_STYLE {
        return Ok(Some(text.to_string()));
    }
    let recipe = parse_recipe(style)?;
    let mut current = text.to_string();
    for t in recipe {
        match t.apply(&current) {
            Some(next) => current = next,
            None => return Ok(None),
        }
    }
    Ok(Some(current))
}

const SUBJECTS: [&str; 16] = [
    "it",
    "he",
    "she",
    "they",
    "we",
    "Morgan Freeman",
    "the company",
    "the committee",
    "my neighbor",
    "the director",
    "our team",
    "the students",
    "the critics",
    "local farmers",
    "the band",
    "two engineers",
];
const PLURAL_SUBJECTS: [&str; 5] = ["they", "we", "the students", "the critics", "local farmers"];
const VERBS_ING: [&str; 12] = [
    "planning",
    "building",
    "writing",
    "hosting",
    "preparing",
    "reviewing",
    "launching",
    "organizing",
    "designing",
    "painting",
    "recording",
    "funding",
];
const OBJECTS: [&str; 12] = [
    "another night of original series",
    "the new one",
    "a small garden",
    "the annual report",
    "a late dinner",
    "the final chapter",
    "a new bridge",
    "the spring festival",
    "two short films",
    "the old theater",
    "a quiet concert",
    "the next season",
];
const ADJUNCTS: [&str; 8] =
    ["", "this week", "in the city", "for the museum", "after lunch", "near the river", "with great care", "on friday"];

fn base_sentence(rng: &mut impl Rng) -> String {
    let subject = SUBJECTS[rng.random_range(0..SUBJECTS.len())];
    let object = OBJECTS[rng.random_range(0..OBJECTS.len())];
    let adjunct = ADJUNCTS[rng.random_range(0..ADJUNCTS.len())];
    let verb_group = if rng.random_bool(0.75) {
        let aux = if subject == "two engineers" || PLURAL_SUBJECTS.contains(&subject) { "are" } else { "is" };
        let also = if rng.random_bool(0.2) { " also" } else { "" };
        format!("{aux}{also} {}", VERBS_ING[rng.random_range(0..VERBS_ING.len())])
    } else {
        "did".to_string()
    };
    let mut s = format!("{} {verb_group} {object}", match_case("X", subject));
    if !adjunct.is_empty() {
        s.push(' ');
        s.push_str(adjunct);
    }
    s.push('.');
    s
}

/// Generates a corpus with the original style plus one style per requested
/// transform, split 80/10/10 per style. Deterministic under `config.seed`.
pub fn generate_synthetic(config: &SynthConfig) -> Result<StyleCorpus> {
    if config.sentences_per_style < 2 {
        return Err(self::config("sentences_per_style must be >= 2"));
    }
    if config.n_base_sentences == 0 {
        return Err(self::config("n_base_sentences must be >= 1"));
    }
    let mut style_names = vec![ORIGINAL_STYLE.to_string()];
    for name in &config.styles_requested {
        if style_names.contains(name) {
            return Err(self::config(format!("style {name:?} requested twice")));
        }
        parse_recipe(name)?;
        style_names.push(name.clone());
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut seen = HashSet::new();
    let mut base = Vec::with_capacity(config.n_base_sentences);
    let mut attempts = 0;
    while base.len() < config.n_base_sentences {
        attempts += 1;
        if attempts > config.n_base_sentences * 100 {
            return Err(self::config(format!(
                "template grammar cannot produce {} distinct sentences",
                config.n_base_sentences
            )));
        }
        let s = base_sentence(&mut rng);
        if seen.insert(s.clone()) {
            base.push(s);
        }
    }

    let mut rows = Vec::with_capacity(style_names.len() * config.sentences_per_style);
    for (style_idx, name) in style_names.iter().enumerate() {
        let mut pool = Vec::new();
        for b in &base {
            if let Some(t) = apply_style(name, b)? {
                pool.push(t);
            }
        }
        if pool.is_empty() {
            return Err(self::config(format!("style {name:?} applies to no base sentence")));
        }
        pool.shuffle(&mut rng);
        rows.extend(pool.iter().cycle().take(config.sentences_per_style).map(|t| (t.clone(), style_idx)));
    }

    let styles: Vec<usize> = rows.iter().map(|(_, s)| *s).collect();
    let assignment = stratified_assignment(&styles, style_names.len(), DEFAULT_SPLIT_RATIOS, config.seed)?;
    StyleCorpus::assemble(rows, style_names, assignment)
}
