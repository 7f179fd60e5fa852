//! Versioned JSON checkpoints made of named, shaped tensors.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{EncoderDims, EncoderParams};
use crate::corpus::Vocab;
use crate::error::{shape, validation, Result};

const FORMAT: &str = "stylecl-encoder";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

/// On-disk form of an encoder, optionally with the vocabulary and style
/// names it was trained against.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub dropout_rate: f64,
    pub tensors: Vec<NamedTensor>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vocab: Option<Vocab>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub styles: Vec<String>,
}

const NAMES: [&str; 7] =
    ["token_embeddings", "hidden_weights", "hidden_bias", "projection", "projection_bias", "head_weights", "head_bias"];

impl Checkpoint {
    pub fn from_params(params: &EncoderParams, vocab: Option<&Vocab>, styles: &[String]) -> Self {
        let d = params.dims;
        let l = d.layout();
        let mut shapes = vec![
            vec![d.vocab_size, d.embed_dim],
            vec![d.embed_dim, d.hidden_dim],
            vec![d.hidden_dim],
            vec![d.hidden_dim, d.out_dim],
            vec![d.out_dim],
        ];
        let mut ranges = vec![l.embeddings, l.hidden_w, l.hidden_b, l.proj_w, l.proj_b];
        if let Some(c) = d.num_classes {
            shapes.extend([vec![d.out_dim, c], vec![c]]);
            ranges.extend([l.head_w, l.head_b]);
        }
        let tensors = NAMES
            .iter()
            .zip(shapes.into_iter().zip(ranges))
            .map(|(name, (shape, r))| NamedTensor { name: (*name).to_string(), shape, data: params.values[r].to_vec() })
            .collect();
        Self {
            format: FORMAT.into(),
            version: VERSION,
            dropout_rate: params.dropout_rate,
            tensors,
            vocab: vocab.cloned(),
            styles: styles.to_vec(),
        }
    }

    /// Rebuilds the parameters, checking every tensor's name and shape.
    /// With `expected`, the dimensions must also match it exactly.
    pub fn to_params(&self, expected: Option<&EncoderDims>) -> Result<EncoderParams> {
        if self.format != FORMAT || self.version != VERSION {
            return Err(validation(format!(
                "unsupported checkpoint {} v{} (want {FORMAT} v{VERSION})",
                self.format, self.version
            )));
        }
        let n = self.tensors.len();
        if n != 5 && n != 7 {
            return Err(shape(format!("checkpoint has {n} tensors, expected 5 or 7")));
        }
        for (t, want) in self.tensors.iter().zip(NAMES) {
            if t.name != want {
                return Err(validation(format!("tensor {:?} where {want:?} was expected", t.name)));
            }
            if t.shape.iter().product::<usize>() != t.data.len() {
                return Err(shape(format!("tensor {} has shape {:?} but {} values", t.name, t.shape, t.data.len())));
            }
        }
        let dim2 = |i: usize| -> Result<(usize, usize)> {
            match self.tensors[i].shape[..] {
                [a, b] => Ok((a, b)),
                _ => Err(shape(format!("tensor {} must be a matrix", self.tensors[i].name))),
            }
        };
        let (vocab_size, embed_dim) = dim2(0)?;
        let (_, hidden_dim) = dim2(1)?;
        let (_, out_dim) = dim2(3)?;
        let num_classes = if n == 7 { Some(dim2(5)?.1) } else { None };
        let dims = EncoderDims { vocab_size, embed_dim, hidden_dim, out_dim, num_classes };

        let want = Self::from_params(&EncoderParams::zeros(dims, 0.0)?, None, &[]);
        for (t, w) in self.tensors.iter().zip(&want.tensors) {
            if t.shape != w.shape {
                return Err(shape(format!("tensor {} has shape {:?}, expected {:?}", t.name, t.shape, w.shape)));
            }
        }
        if let Some(exp) = expected {
            if *exp != dims {
                return Err(shape(format!("checkpoint dims {dims:?} differ from expected {exp:?}")));
            }
        }
        if let Some(v) = &self.vocab {
            if v.len() != vocab_size {
                return Err(shape(format!("vocab has {} tokens but embeddings have {vocab_size} rows", v.len())));
            }
        }
        if !self.styles.is_empty() && num_classes.is_some_and(|c| c != self.styles.len()) {
            return Err(shape("classifier width differs from the number of style names"));
        }
        let values = self.tensors.iter().flat_map(|t| t.data.iter().copied()).collect();
        EncoderParams::from_values(dims, self.dropout_rate, values)
    }
}

pub fn save_checkpoint(path: &Path, checkpoint: &Checkpoint) -> Result<()> {
    let mut text = serde_json::to_string(checkpoint)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
}
