use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{config, validation, Error, Result};

pub const PAD_TOKEN: &str = "<pad>";
pub const UNK_TOKEN: &str = "<unk>";

/// Dense token → id mapping. Ids 0 and 1 are reserved for padding and
/// unknown words.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct Vocab {
    tokens: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, u32>,
}

impl Vocab {
    pub const PAD_ID: u32 = 0;
    pub const UNK_ID: u32 = 1;

    /// Rebuilds a vocabulary from its id-ordered token list.
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < 2 || tokens[0] != PAD_TOKEN || tokens[1] != UNK_TOKEN {
            return Err(validation("vocab must start with <pad>, <unk>"));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (id, tok) in tokens.iter().enumerate() {
            if index.insert(tok.clone(), id as u32).is_some() {
                return Err(validation(format!("duplicate vocab token {tok:?}")));
            }
        }
        Ok(Self { tokens, index })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }
}

impl TryFrom<Vec<String>> for Vocab {
    type Error = Error;

    fn try_from(tokens: Vec<String>) -> Result<Self> {
        Vocab::from_tokens(tokens)
    }
}

impl From<Vocab> for Vec<String> {
    fn from(v: Vocab) -> Self {
        v.tokens
    }
}

/// Lowercases and splits on whitespace; every punctuation character other
/// than an apostrophe becomes its own token.
pub fn split_words(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut word = String::new();
    for c in text.chars().flat_map(char::to_lowercase) {
        if c.is_whitespace() {
            if !word.is_empty() {
                out.push(std::mem::take(&mut word));
            }
        } else if c.is_alphanumeric() || c == '\'' {
            word.push(c);
        } else {
            if !word.is_empty() {
                out.push(std::mem::take(&mut word));
            }
            out.push(c.to_string());
        }
    }
    if !word.is_empty() {
        out.push(word);
    }
    out
}

/// Maps `text` to token ids, falling back to [`Vocab::UNK_ID`].
pub fn tokenize(text: &str, vocab: &Vocab) -> Result<Vec<u32>> {
    if text.trim().is_empty() {
        return Err(Error::Degenerate("cannot tokenize empty text".into()));
    }
    Ok(split_words(text).iter().map(|w| vocab.id(w).unwrap_or(Vocab::UNK_ID)).collect())
}

/// Keeps tokens seen at least `min_freq` times, ordered by descending
/// frequency and then lexicographically.
pub fn build_vocab<'a, I>(texts: I, min_freq: usize) -> Result<Vocab>
where
    I: IntoIterator<Item = &'a str>,
{
    if min_freq == 0 {
        return Err(config("min_freq must be >= 1"));
    }
    let mut counts: HashMap<String, usize> = HashMap::new();
    for text in texts {
        for w in split_words(text) {
            *counts.entry(w).or_default() += 1;
        }
    }
    let mut kept: Vec<(String, usize)> =
        counts.into_iter().filter(|(tok, n)| *n >= min_freq && tok != PAD_TOKEN && tok != UNK_TOKEN).collect();
    if kept.is_empty() {
        return Err(validation(format!("no token occurs at least {min_freq} times")));
    }
    kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));

    let mut tokens = vec![PAD_TOKEN.to_string(), UNK_TOKEN.to_string()];
    tokens.extend(kept.into_iter().map(|(t, _)| t));
    Vocab::from_tokens(tokens)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_words_handles_punctuation() {
        assert_eq!(split_words("It is planning ."), ["it", "is", "planning", "."]);
        assert_eq!(split_words("Hi,there!  it's"), ["hi", ",", "there", "!", "it's"]);
    }

    #[test]
    fn tokenize_known_and_unknown() {
        let vocab = build_vocab(["it is planning ."], 1).unwrap();
        let ids = tokenize("It is planning .", &vocab).unwrap();
        assert_eq!(ids.len(), 4);
        assert!(ids.iter().all(|&id| id > Vocab::UNK_ID));

        let ids = tokenize("It is dancing .", &vocab).unwrap();
        assert_eq!(ids[2], Vocab::UNK_ID);
        assert_ne!(ids[1], Vocab::UNK_ID);

        assert!(matches!(tokenize("", &vocab), Err(Error::Degenerate(_))));
        assert!(matches!(tokenize("  \t", &vocab), Err(Error::Degenerate(_))));
    }

    #[test]
    fn build_vocab_thresholds() {
        let v = build_vocab(["a a b"], 1).unwrap();
        assert_eq!(v.tokens(), [PAD_TOKEN, UNK_TOKEN, "a", "b"]);
        let v = build_vocab(["a a b"], 2).unwrap();
        assert_eq!(v.tokens(), [PAD_TOKEN, UNK_TOKEN, "a"]);
        assert!(matches!(build_vocab(["a a b"], 3), Err(Error::Validation(_))));
        assert!(matches!(build_vocab(["a"], 0), Err(Error::Config(_))));
    }

    #[test]
    fn build_vocab_is_deterministic() {
        let texts = ["the cat sat", "a dog sat down", "the end , the start"];
        let a = build_vocab(texts, 1).unwrap();
        let b = build_vocab(texts, 1).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.token(2), Some("the"));
        assert_eq!(a.token(3), Some("sat"));
    }

    #[test]
    fn vocab_serde_round_trip_and_validation() {
        let v = build_vocab(["x y z"], 1).unwrap();
        let json = serde_json::to_string(&v).unwrap();
        let back: Vocab = serde_json::from_str(&json).unwrap();
        assert_eq!(back, v);
        assert_eq!(back.id("y"), v.id("y"));
        assert!(serde_json::from_str::<Vocab>(r#"["a","b"]"#).is_err());
        assert!(Vocab::from_tokens(vec!["<pad>".into(), "<unk>".into(), "a".into(), "a".into()]).is_err());
    }
}
