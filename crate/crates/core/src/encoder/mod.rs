//! Reference sentence encoder.
//!
//! `tokens → embedding lookup → mean pool → (dropout) → tanh(xW + b) →
//! hP + c → l2 normalize`, plus an optional linear classifier head on the
//! normalized output. Every parameter lives in one flat `Vec<f64>` so the
//! optimizer and the finite-difference checker can treat it as a vector.

mod backward;
mod checkpoint;

use std::ops::{Deref, Range};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::Sentence;
use crate::error::{config, shape, Error, Result};
use crate::numeric::norm;

pub use backward::{batch_loss, forward_backward};
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, NamedTensor};

/// Layer sizes. `num_classes` is `None` when there is no classifier head.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderDims {
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub out_dim: usize,
    pub num_classes: Option<usize>,
}

impl EncoderDims {
    pub const DEFAULT_EMBED: usize = 32;
    pub const DEFAULT_HIDDEN: usize = 64;
    pub const DEFAULT_OUT: usize = 32;

    pub fn new(vocab_size: usize, num_classes: Option<usize>) -> Self {
        Self {
            vocab_size,
            embed_dim: Self::DEFAULT_EMBED,
            hidden_dim: Self::DEFAULT_HIDDEN,
            out_dim: Self::DEFAULT_OUT,
            num_classes,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.vocab_size == 0 || self.embed_dim == 0 || self.hidden_dim == 0 {
            return Err(config(format!("encoder dimensions must be positive: {self:?}")));
        }
        if self.out_dim < 2 {
            return Err(config("output dimension must be at least 2"));
        }
        if self.num_classes == Some(0) {
            return Err(config("classifier head needs at least one class"));
        }
        Ok(())
    }

    pub(crate) fn layout(&self) -> Layout {
        let mut at = 0;
        let mut next = |len: usize| {
            let r = at..at + len;
            at += len;
            r
        };
        let embeddings = next(self.vocab_size * self.embed_dim);
        let hidden_w = next(self.embed_dim * self.hidden_dim);
        let hidden_b = next(self.hidden_dim);
        let proj_w = next(self.hidden_dim * self.out_dim);
        let proj_b = next(self.out_dim);
        let c = self.num_classes.unwrap_or(0);
        let head_w = next(self.out_dim * c);
        let head_b = next(c);
        Layout { embeddings, hidden_w, hidden_b, proj_w, proj_b, head_w, head_b, total: at }
    }
}

/// Offsets of each tensor inside the flat parameter vector.
#[derive(Debug, Clone)]
pub(crate) struct Layout {
    pub embeddings: Range<usize>,
    pub hidden_w: Range<usize>,
    pub hidden_b: Range<usize>,
    pub proj_w: Range<usize>,
    pub proj_b: Range<usize>,
    pub head_w: Range<usize>,
    pub head_b: Range<usize>,
    pub total: usize,
}

/// All trainable weights plus the dropout rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderParams {
    dims: EncoderDims,
    dropout_rate: f64,
    values: Vec<f64>,
}

/// A unit-norm sentence embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding(Vec<f64>);

impl Embedding {
    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }
}

impl Deref for Embedding {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl AsRef<[f64]> for Embedding {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

/// Whether dropout is active. Train mode carries the seed of its masks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Eval,
    Train { seed: u64 },
}

/// Intermediate values of one forward pass, kept for backprop.
#[derive(Debug, Clone)]
pub(crate) struct Trace {
    /// Dropout multipliers applied to the pooled vector, if any.
    pub mask: Option<Vec<f64>>,
    /// Pooled input to the hidden layer, after dropout.
    pub input: Vec<f64>,
    pub hidden: Vec<f64>,
    pub pre_norm: f64,
    pub output: Vec<f64>,
}

fn check_dropout(rate: f64) -> Result<()> {
    if !(0.0..1.0).contains(&rate) {
        return Err(config(format!("dropout rate must be in [0, 1), got {rate}")));
    }
    Ok(())
}

impl EncoderParams {
    /// All-zero parameters.
    pub fn zeros(dims: EncoderDims, dropout_rate: f64) -> Result<Self> {
        dims.validate()?;
        check_dropout(dropout_rate)?;
        Ok(Self { values: vec![0.0; dims.layout().total], dims, dropout_rate })
    }

    /// Seeded random initialization: token embeddings uniform in [-1, 1],
    /// weight matrices Glorot-uniform, biases zero.
    pub fn init(dims: EncoderDims, dropout_rate: f64, seed: u64) -> Result<Self> {
        let mut p = Self::zeros(dims, dropout_rate)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layout = dims.layout();
        let glorot = |fan_in: usize, fan_out: usize| (6.0 / (fan_in + fan_out) as f64).sqrt();
        let c = dims.num_classes.unwrap_or(1);
        let ranges = [
            (layout.embeddings.clone(), 1.0),
            (layout.hidden_w.clone(), glorot(dims.embed_dim, dims.hidden_dim)),
            (layout.proj_w.clone(), glorot(dims.hidden_dim, dims.out_dim)),
            (layout.head_w.clone(), glorot(dims.out_dim, c)),
        ];
        for (range, bound) in ranges {
            for v in &mut p.values[range] {
                *v = rng.random_range(-bound..bound);
            }
        }
        Ok(p)
    }

    /// Builds parameters from an explicit flat vector laid out as
    /// embeddings, hidden weights, hidden bias, projection weights,
    /// projection bias, head weights, head bias (all row-major).
    pub fn from_values(dims: EncoderDims, dropout_rate: f64, values: Vec<f64>) -> Result<Self> {
        dims.validate()?;
        check_dropout(dropout_rate)?;
        let total = dims.layout().total;
        if values.len() != total {
            return Err(shape(format!("expected {total} parameters, got {}", values.len())));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Degenerate("non-finite parameter".into()));
        }
        Ok(Self { dims, dropout_rate, values })
    }

    pub fn dims(&self) -> &EncoderDims {
        &self.dims
    }

    pub fn dropout_rate(&self) -> f64 {
        self.dropout_rate
    }

    pub fn set_dropout_rate(&mut self, rate: f64) -> Result<()> {
        check_dropout(rate)?;
        self.dropout_rate = rate;
        Ok(())
    }

    pub fn num_params(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn has_classifier(&self) -> bool {
        self.dims.num_classes.is_some()
    }

    /// Returns a copy with a freshly initialized classifier head of
    /// `num_classes` outputs (other weights unchanged).
    pub fn with_classifier(&self, num_classes: usize, seed: u64) -> Result<Self> {
        let dims = EncoderDims { num_classes: Some(num_classes), ..self.dims };
        let mut fresh = Self::init(dims, self.dropout_rate, seed)?;
        let old = self.dims.layout();
        let new = dims.layout();
        fresh.values[..new.proj_b.end].copy_from_slice(&self.values[..old.proj_b.end]);
        Ok(fresh)
    }

    /// SHA-256 over dimensions, dropout rate and the exact parameter bits.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        let d = &self.dims;
        for n in [d.vocab_size, d.embed_dim, d.hidden_dim, d.out_dim, d.num_classes.unwrap_or(0)] {
            h.update((n as u64).to_le_bytes());
        }
        h.update(self.dropout_rate.to_bits().to_le_bytes());
        for v in &self.values {
            h.update(v.to_bits().to_le_bytes());
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Draws the inverted-dropout multipliers for one sentence.
    pub(crate) fn dropout_mask(&self, rng: &mut impl Rng) -> Option<Vec<f64>> {
        if self.dropout_rate == 0.0 {
            return None;
        }
        let keep = 1.0 - self.dropout_rate;
        Some((0..self.dims.embed_dim).map(|_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 }).collect())
    }

    pub(crate) fn forward(&self, tokens: &[u32], mask: Option<Vec<f64>>) -> Result<Trace> {
        let d = &self.dims;
        let l = d.layout();
        if tokens.is_empty() {
            return Err(Error::Degenerate("cannot encode an empty token sequence".into()));
        }
        let emb = &self.values[l.embeddings];
        let mut input = vec![0.0; d.embed_dim];
        for &t in tokens {
            let t = t as usize;
            if t >= d.vocab_size {
                return Err(shape(format!("token id {t} outside vocabulary of {}", d.vocab_size)));
            }
            for (x, e) in input.iter_mut().zip(&emb[t * d.embed_dim..(t + 1) * d.embed_dim]) {
                *x += e;
            }
        }
        let n = tokens.len() as f64;
        for x in &mut input {
            *x /= n;
        }
        if let Some(m) = &mask {
            for (x, k) in input.iter_mut().zip(m) {
                *x *= k;
            }
        }

        let w = &self.values[l.hidden_w];
        let mut hidden = self.values[l.hidden_b].to_vec();
        for (i, &x) in input.iter().enumerate() {
            if x != 0.0 {
                for (hj, wij) in hidden.iter_mut().zip(&w[i * d.hidden_dim..(i + 1) * d.hidden_dim]) {
                    *hj += x * wij;
                }
            }
        }
        for h in &mut hidden {
            *h = h.tanh();
        }

        let p = &self.values[l.proj_w];
        let mut z = self.values[l.proj_b].to_vec();
        for (j, &h) in hidden.iter().enumerate() {
            for (zk, pjk) in z.iter_mut().zip(&p[j * d.out_dim..(j + 1) * d.out_dim]) {
                *zk += h * pjk;
            }
        }
        let pre_norm = norm(&z);
        if pre_norm == 0.0 || !pre_norm.is_finite() {
            return Err(Error::Degenerate(format!("projection output has norm {pre_norm}")));
        }
        let output = z.iter().map(|v| v / pre_norm).collect();
        Ok(Trace { mask, input, hidden, pre_norm, output })
    }

    pub(crate) fn logits_unchecked(&self, embedding: &[f64]) -> Vec<f64> {
        let l = self.dims.layout();
        let c = self.dims.num_classes.unwrap_or(0);
        let w = &self.values[l.head_w];
        let mut out = self.values[l.head_b].to_vec();
        for (k, &y) in embedding.iter().enumerate() {
            for (o, wkc) in out.iter_mut().zip(&w[k * c..(k + 1) * c]) {
                *o += y * wkc;
            }
        }
        out
    }
}

/// Embeds one token sequence.
pub fn encode_tokens(params: &EncoderParams, tokens: &[u32], mode: Mode) -> Result<Embedding> {
    let mask = match mode {
        Mode::Eval => None,
        Mode::Train { seed } => params.dropout_mask(&mut ChaCha8Rng::seed_from_u64(seed)),
    };
    Ok(Embedding(params.forward(tokens, mask)?.output))
}

/// Embeds one sentence.
pub fn encode(params: &EncoderParams, sentence: &Sentence, mode: Mode) -> Result<Embedding> {
    encode_tokens(params, &sentence.tokens, mode)
}

/// Eval-mode embeddings for several sentences.
pub fn encode_all<'a, I>(params: &EncoderParams, sentences: I) -> Result<Vec<Embedding>>
where
    I: IntoIterator<Item = &'a Sentence>,
{
    sentences.into_iter().map(|s| encode(params, s, Mode::Eval)).collect()
}

/// Classifier-head scores for an embedding (no softmax).
pub fn classify_logits(params: &EncoderParams, embedding: &Embedding) -> Result<Vec<f64>> {
    if !params.has_classifier() {
        return Err(config("encoder has no classifier head"));
    }
    if embedding.dim() != params.dims.out_dim {
        return Err(shape(format!("embedding dim {} vs encoder output dim {}", embedding.dim(), params.dims.out_dim)));
    }
    Ok(params.logits_unchecked(embedding))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_dims() -> EncoderDims {
        EncoderDims { vocab_size: 7, embed_dim: 4, hidden_dim: 5, out_dim: 3, num_classes: Some(2) }
    }

    fn sentence(tokens: Vec<u32>) -> Sentence {
        Sentence { id: 0, tokens, raw_text: String::new(), style: 0 }
    }

    #[test]
    fn eval_embeddings_are_unit_and_deterministic() {
        let p = EncoderParams::init(small_dims(), 0.1, 3).unwrap();
        let s = sentence(vec![2, 3, 4, 2]);
        let a = encode(&p, &s, Mode::Eval).unwrap();
        let b = encode(&p, &s, Mode::Eval).unwrap();
        assert_eq!(a, b);
        assert!((norm(&a) - 1.0).abs() < 1e-9);
    }

    #[test]
    fn hand_evaluated_single_token_pipeline() {
        let dims = EncoderDims { vocab_size: 2, embed_dim: 2, hidden_dim: 2, out_dim: 2, num_classes: None };
        #[rustfmt::skip]
        let values = vec![
            0.5, -0.25, 0.1, 0.2,      // token embeddings
            0.3, -0.7, 0.9, 0.4,       // hidden weights (e × h)
            0.05, -0.1,                // hidden bias
            1.2, -0.3, 0.6, 0.8,       // projection (h × d)
            0.02, 0.01,                // projection bias
        ];
        let p = EncoderParams::from_values(dims, 0.0, values).unwrap();
        let e = encode(&p, &sentence(vec![0]), Mode::Eval).unwrap();
        // 50-digit reference evaluation of the five stages.
        assert!((e[0] - -0.629_596_327_837_726_97).abs() < 1e-15);
        assert!((e[1] - -0.776_922_431_117_321_7).abs() < 1e-15);
    }

    #[test]
    fn zero_dropout_train_equals_eval() {
        let p = EncoderParams::init(small_dims(), 0.0, 1).unwrap();
        let s = sentence(vec![1, 5, 6]);
        assert_eq!(encode(&p, &s, Mode::Train { seed: 99 }).unwrap(), encode(&p, &s, Mode::Eval).unwrap());
        let p = EncoderParams::init(small_dims(), 0.5, 1).unwrap();
        let t1 = encode(&p, &s, Mode::Train { seed: 99 }).unwrap();
        let t2 = encode(&p, &s, Mode::Train { seed: 99 }).unwrap();
        assert_eq!(t1, t2);
        assert!((norm(&t1) - 1.0).abs() < 1e-9);
    }

    #[test]
    fn encode_errors() {
        let p = EncoderParams::init(small_dims(), 0.1, 1).unwrap();
        assert!(matches!(encode(&p, &sentence(vec![7]), Mode::Eval), Err(Error::Shape(_))));
        let z = EncoderParams::zeros(small_dims(), 0.1).unwrap();
        assert!(matches!(encode(&z, &sentence(vec![1]), Mode::Eval), Err(Error::Degenerate(_))));
        assert!(EncoderParams::zeros(EncoderDims { out_dim: 1, ..small_dims() }, 0.0).is_err());
        assert!(EncoderParams::zeros(small_dims(), 1.0).is_err());
    }

    #[test]
    fn classifier_logits() {
        let dims = small_dims();
        let mut p = EncoderParams::init(dims, 0.0, 4).unwrap();
        let l = dims.layout();
        let e = encode(&p, &sentence(vec![2, 3]), Mode::Eval).unwrap();

        p.values_mut()[l.head_w.clone()].fill(0.0);
        p.values_mut()[l.head_b.clone()].fill(0.0);
        assert_eq!(classify_logits(&p, &e).unwrap(), vec![0.0, 0.0]);

        let vals: Vec<f64> = (0..8).map(|i| 0.1 * i as f64 - 0.35).collect();
        p.values_mut()[l.head_w.start..l.head_b.end].copy_from_slice(&vals);
        let got = classify_logits(&p, &e).unwrap();
        for c in 0..2 {
            let want = vals[6 + c] + (0..3).map(|k| e[k] * vals[k * 2 + c]).sum::<f64>();
            assert!((got[c] - want).abs() < 1e-12);
        }

        let no_head = EncoderParams::init(EncoderDims { num_classes: None, ..dims }, 0.0, 4).unwrap();
        assert!(matches!(classify_logits(&no_head, &e), Err(Error::Config(_))));
    }

    #[test]
    fn identity_head_reproduces_coordinates() {
        let dims = EncoderDims { num_classes: Some(3), ..small_dims() };
        let mut p = EncoderParams::init(dims, 0.0, 8).unwrap();
        let l = dims.layout();
        let head = &mut p.values_mut()[l.head_w.start..l.head_b.end];
        head.fill(0.0);
        for k in 0..3 {
            head[k * 3 + k] = 1.0;
        }
        let e = encode(&p, &sentence(vec![4, 4, 2]), Mode::Eval).unwrap();
        assert_eq!(classify_logits(&p, &e).unwrap(), e.as_slice().to_vec());
    }

    #[test]
    fn with_classifier_keeps_encoder_weights() {
        let base = EncoderParams::init(EncoderDims { num_classes: None, ..small_dims() }, 0.1, 2).unwrap();
        let headed = base.with_classifier(4, 9).unwrap();
        let s = sentence(vec![1, 2, 3]);
        assert_eq!(encode(&base, &s, Mode::Eval).unwrap(), encode(&headed, &s, Mode::Eval).unwrap());
        assert_eq!(headed.dims().num_classes, Some(4));
        assert_ne!(base.fingerprint(), headed.fingerprint());
    }
}
