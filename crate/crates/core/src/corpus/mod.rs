//! Style-labelled corpora: data model, JSONL/TSV loaders, stratified splits
//! and the synthetic low-level transform generator.

mod synth;
mod vocab;

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{config, validation, Error, Result};

pub use synth::{apply_style, generate_synthetic, SynthConfig, Transform, ORIGINAL_STYLE, TRANSFORM_NAMES};
pub use vocab::{build_vocab, split_words, tokenize, Vocab, PAD_TOKEN, UNK_TOKEN};

/// Ratios used when a file carries no split column.
pub const DEFAULT_SPLIT_RATIOS: (f64, f64, f64) = (0.8, 0.1, 0.1);
pub const DEFAULT_SPLIT_SEED: u64 = 0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Dev, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "dev" => Ok(Split::Dev),
            "test" => Ok(Split::Test),
            other => Err(validation(format!("unknown split {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorpusFormat {
    Jsonl,
    Tsv,
}

impl CorpusFormat {
    /// Guesses the format from a file extension.
    pub fn from_path(path: &Path) -> Option<Self> {
        match path.extension()?.to_str()? {
            "jsonl" | "json" => Some(CorpusFormat::Jsonl),
            "tsv" => Some(CorpusFormat::Tsv),
            _ => None,
        }
    }
}

impl FromStr for CorpusFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "jsonl" => Ok(CorpusFormat::Jsonl),
            "tsv" => Ok(CorpusFormat::Tsv),
            other => Err(config(format!("unknown corpus format {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StyleLabel {
    pub index: usize,
    pub name: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sentence {
    pub id: usize,
    pub tokens: Vec<u32>,
    pub raw_text: String,
    /// Index into the owning corpus's style list.
    pub style: usize,
}

/// Sorted sentence ids per split.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Splits {
    pub train: Vec<usize>,
    pub dev: Vec<usize>,
    pub test: Vec<usize>,
}

impl Splits {
    pub fn get(&self, split: Split) -> &[usize] {
        match split {
            Split::Train => &self.train,
            Split::Dev => &self.dev,
            Split::Test => &self.test,
        }
    }

    fn get_mut(&mut self, split: Split) -> &mut Vec<usize> {
        match split {
            Split::Train => &mut self.train,
            Split::Dev => &mut self.dev,
            Split::Test => &mut self.test,
        }
    }
}

/// A validated collection of style-labelled sentences with train/dev/test
/// splits. Sentence ids are dense: `sentences[i].id == i`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StyleCorpus {
    sentences: Vec<Sentence>,
    styles: Vec<StyleLabel>,
    splits: Splits,
    vocab: Vocab,
}

impl StyleCorpus {
    /// Builds a corpus from `(text, style index, split)` rows. The vocabulary
    /// comes from the training split.
    pub(crate) fn assemble(
        rows: Vec<(String, usize)>,
        style_names: Vec<String>,
        assignment: Vec<Split>,
    ) -> Result<Self> {
        debug_assert_eq!(rows.len(), assignment.len());
        if rows.is_empty() {
            return Err(validation("corpus is empty"));
        }
        let vocab = build_vocab(
            rows.iter().zip(&assignment).filter(|(_, s)| **s == Split::Train).map(|((t, _), _)| t.as_str()),
            1,
        )?;
        let mut splits = Splits::default();
        let mut sentences = Vec::with_capacity(rows.len());
        for (id, ((text, style), split)) in rows.into_iter().zip(assignment).enumerate() {
            let tokens = tokenize(&text, &vocab)?;
            splits.get_mut(split).push(id);
            sentences.push(Sentence { id, tokens, raw_text: text, style });
        }
        let styles = style_names.into_iter().enumerate().map(|(index, name)| StyleLabel { index, name }).collect();
        let corpus = Self { sentences, styles, splits, vocab };
        corpus.validate()?;
        Ok(corpus)
    }

    /// Checks every corpus invariant: dense ids, split partition, valid
    /// styles and at least two sentences per style in every split.
    pub fn validate(&self) -> Result<()> {
        if self.sentences.is_empty() {
            return Err(validation("corpus is empty"));
        }
        for (i, s) in self.sentences.iter().enumerate() {
            if s.id != i {
                return Err(validation(format!("sentence at position {i} has id {}", s.id)));
            }
            if s.tokens.is_empty() {
                return Err(validation(format!("sentence {i} has no tokens")));
            }
            if s.style >= self.styles.len() {
                return Err(validation(format!("sentence {i} has unknown style {}", s.style)));
            }
            if s.tokens.iter().any(|&t| t as usize >= self.vocab.len()) {
                return Err(validation(format!("sentence {i} has out-of-vocab token id")));
            }
        }
        for (i, st) in self.styles.iter().enumerate() {
            if st.index != i {
                return Err(validation(format!("style {} has index {}", st.name, st.index)));
            }
        }
        let mut seen = vec![false; self.sentences.len()];
        for split in Split::ALL {
            for &id in self.splits.get(split) {
                if id >= seen.len() || seen[id] {
                    return Err(validation(format!("splits do not partition ids (id {id})")));
                }
                seen[id] = true;
            }
        }
        if seen.iter().any(|s| !s) {
            return Err(validation("some sentences belong to no split"));
        }
        for split in Split::ALL {
            let counts = self.style_counts(split);
            for (style, n) in counts.iter().enumerate() {
                if *n < 2 {
                    return Err(validation(format!(
                        "style {:?} has {n} sentence(s) in the {split} split; need at least 2",
                        self.styles[style].name
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn sentences(&self) -> &[Sentence] {
        &self.sentences
    }

    pub fn sentence(&self, id: usize) -> &Sentence {
        &self.sentences[id]
    }

    pub fn styles(&self) -> &[StyleLabel] {
        &self.styles
    }

    pub fn num_styles(&self) -> usize {
        self.styles.len()
    }

    pub fn style_index(&self, name: &str) -> Option<usize> {
        self.styles.iter().position(|s| s.name == name)
    }

    pub fn splits(&self) -> &Splits {
        &self.splits
    }

    pub fn split_ids(&self, split: Split) -> &[usize] {
        self.splits.get(split)
    }

    pub fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    /// Ids of `split`, grouped by style index.
    pub fn ids_by_style(&self, split: Split) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.styles.len()];
        for &id in self.splits.get(split) {
            out[self.sentences[id].style].push(id);
        }
        out
    }

    fn style_counts(&self, split: Split) -> Vec<usize> {
        let mut counts = vec![0; self.styles.len()];
        for &id in self.splits.get(split) {
            counts[self.sentences[id].style] += 1;
        }
        counts
    }

    /// Same sentences and splits, tokenized with another vocabulary (for
    /// feeding a corpus to an encoder trained elsewhere).
    pub fn retokenize(&self, vocab: &Vocab) -> Result<Self> {
        let sentences = self
            .sentences
            .iter()
            .map(|s| Ok(Sentence { tokens: tokenize(&s.raw_text, vocab)?, ..s.clone() }))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { sentences, styles: self.styles.clone(), splits: self.splits.clone(), vocab: vocab.clone() })
    }

    fn split_of(&self) -> Vec<Split> {
        let mut out = vec![Split::Train; self.sentences.len()];
        for split in Split::ALL {
            for &id in self.splits.get(split) {
                out[id] = split;
            }
        }
        out
    }

    /// JSONL serialization: one `{"text","style","split"}` object per line,
    /// in id order.
    pub fn to_jsonl(&self) -> String {
        let splits = self.split_of();
        let mut out = String::new();
        for s in &self.sentences {
            let rec = RecordOut { text: &s.raw_text, style: &self.styles[s.style].name, split: splits[s.id].as_str() };
            out.push_str(&serde_json::to_string(&rec).expect("record serializes"));
            out.push('\n');
        }
        out
    }

    pub fn save_jsonl(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_jsonl())?;
        Ok(())
    }
}

#[derive(Serialize)]
struct RecordOut<'a> {
    text: &'a str,
    style: &'a str,
    split: &'a str,
}

#[derive(Deserialize)]
struct RecordIn {
    text: String,
    style: String,
    #[serde(default)]
    split: Option<String>,
}

struct RawRecord {
    line: usize,
    text: String,
    style: String,
    split: Option<Split>,
}

fn check_record(line: usize, text: String, style: String, split: Option<&str>) -> Result<RawRecord> {
    let parse_err = |msg: String| Error::Parse { line, msg };
    if text.trim().is_empty() {
        return Err(parse_err("empty text".into()));
    }
    let style = style.trim().to_string();
    if style.is_empty() {
        return Err(parse_err("missing or empty style value".into()));
    }
    let split = match split.map(str::trim) {
        None | Some("") => None,
        Some(s) => Some(s.parse::<Split>().map_err(|_| parse_err(format!("unknown split {s:?}")))?),
    };
    Ok(RawRecord { line, text, style, split })
}

fn parse_jsonl(content: &str) -> Result<Vec<RawRecord>> {
    let mut out = Vec::new();
    for (i, raw) in content.lines().enumerate() {
        let line = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let rec: RecordIn = serde_json::from_str(raw).map_err(|e| Error::Parse { line, msg: e.to_string() })?;
        out.push(check_record(line, rec.text, rec.style, rec.split.as_deref())?);
    }
    Ok(out)
}

fn parse_tsv(content: &str) -> Result<Vec<RawRecord>> {
    let mut lines = content.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let Some((header_idx, header)) = lines.next() else {
        return Ok(Vec::new());
    };
    let columns: Vec<&str> = header.split('\t').map(str::trim).collect();
    let find = |name: &str| columns.iter().position(|c| *c == name);
    let header_err = |msg: &str| Error::Parse { line: header_idx + 1, msg: msg.into() };
    let text_col = find("text").ok_or_else(|| header_err("header lacks a text column"))?;
    let style_col = find("style").ok_or_else(|| header_err("header lacks a style column"))?;
    let split_col = find("split");

    let mut out = Vec::new();
    for (i, raw) in lines {
        let line = i + 1;
        let fields: Vec<&str> = raw.split('\t').collect();
        if fields.len() != columns.len() {
            return Err(Error::Parse {
                line,
                msg: format!("expected {} tab-separated fields, found {}", columns.len(), fields.len()),
            });
        }
        out.push(check_record(
            line,
            fields[text_col].to_string(),
            fields[style_col].to_string(),
            split_col.map(|c| fields[c]),
        )?);
    }
    Ok(out)
}

/// Parses corpus text in the given format and validates the result.
pub fn parse_corpus(content: &str, format: CorpusFormat) -> Result<StyleCorpus> {
    let records = match format {
        CorpusFormat::Jsonl => parse_jsonl(content)?,
        CorpusFormat::Tsv => parse_tsv(content)?,
    };
    if records.is_empty() {
        return Err(validation("corpus file has no records"));
    }

    let mut style_names: Vec<String> = Vec::new();
    let mut style_ids: HashMap<String, usize> = HashMap::new();
    let mut rows = Vec::with_capacity(records.len());
    for r in &records {
        let next = style_ids.len();
        let idx = *style_ids.entry(r.style.clone()).or_insert_with(|| {
            style_names.push(r.style.clone());
            next
        });
        rows.push((r.text.clone(), idx));
    }

    let with_split = records.iter().filter(|r| r.split.is_some()).count();
    let assignment = if with_split == records.len() {
        records.iter().map(|r| r.split.unwrap()).collect()
    } else if with_split == 0 {
        let styles: Vec<usize> = rows.iter().map(|(_, s)| *s).collect();
        stratified_assignment(&styles, style_names.len(), DEFAULT_SPLIT_RATIOS, DEFAULT_SPLIT_SEED)?
    } else {
        let first = records.iter().find(|r| r.split.is_none()).unwrap();
        return Err(Error::Parse {
            line: first.line,
            msg: "split column must be given for every record or for none".into(),
        });
    };
    StyleCorpus::assemble(rows, style_names, assignment)
}

pub fn load_corpus(path: &Path, format: CorpusFormat) -> Result<StyleCorpus> {
    let content = fs::read_to_string(path)?;
    parse_corpus(&content, format)
}

fn check_ratios(ratios: (f64, f64, f64)) -> Result<()> {
    let (a, b, c) = ratios;
    if !(a > 0.0 && b > 0.0 && c > 0.0) {
        return Err(config(format!("split ratios must be positive, got {ratios:?}")));
    }
    if (a + b + c - 1.0).abs() > 1e-9 {
        return Err(config(format!("split ratios must sum to 1, got {ratios:?}")));
    }
    Ok(())
}

/// Per-style shuffle-split of sentence positions into train/dev/test.
fn stratified_assignment(styles: &[usize], n_styles: usize, ratios: (f64, f64, f64), seed: u64) -> Result<Vec<Split>> {
    check_ratios(ratios)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut by_style = vec![Vec::new(); n_styles];
    for (pos, &s) in styles.iter().enumerate() {
        by_style[s].push(pos);
    }
    let mut out = vec![Split::Train; styles.len()];
    for (style, members) in by_style.iter_mut().enumerate() {
        let n = members.len();
        let n_dev = (n as f64 * ratios.1).round() as usize;
        let n_test = (n as f64 * ratios.2).round() as usize;
        let n_train = n.saturating_sub(n_dev + n_test);
        if n_train < 2 || n_dev < 2 || n_test < 2 {
            return Err(validation(format!(
                "style {style} has {n} sentences; cannot give every split at least 2 \
                 (train {n_train}, dev {n_dev}, test {n_test})"
            )));
        }
        members.shuffle(&mut rng);
        for &pos in &members[n_train..n_train + n_dev] {
            out[pos] = Split::Dev;
        }
        for &pos in &members[n_train + n_dev..] {
            out[pos] = Split::Test;
        }
    }
    Ok(out)
}

/// Re-splits a corpus with a per-style stratified shuffle. The vocabulary
/// is rebuilt from the new training split.
pub fn split_corpus(corpus: &StyleCorpus, ratios: (f64, f64, f64), seed: u64) -> Result<StyleCorpus> {
    let styles: Vec<usize> = corpus.sentences.iter().map(|s| s.style).collect();
    let assignment = stratified_assignment(&styles, corpus.num_styles(), ratios, seed)?;
    let rows = corpus.sentences.iter().map(|s| (s.raw_text.clone(), s.style)).collect();
    let names = corpus.styles.iter().map(|s| s.name.clone()).collect();
    StyleCorpus::assemble(rows, names, assignment)
}
