//! Multinomial logistic-regression probe on frozen embeddings.
//!
//! Fitting is full-batch gradient descent from all-zero weights with an
//! Armijo backtracking line search, so the result depends only on the data.

use serde::{Deserialize, Serialize};

use crate::corpus::{Split, StyleCorpus};
use crate::encoder::{encode_all, EncoderParams};
use crate::error::{config, shape, validation, Result};
use crate::numeric::log_softmax_unchecked;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeConfig {
    pub max_iterations: usize,
    /// Stop once an iteration lowers the objective by less than this.
    pub tolerance: f64,
    /// Weight of `½‖W‖²` in the objective (the bias is not penalized).
    pub l2: f64,
    /// Recorded for provenance; the optimizer itself is deterministic.
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self { max_iterations: 2000, tolerance: 1e-10, l2: 1e-4, seed: 0 }
    }
}

impl ProbeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.tolerance.is_nan() || self.tolerance <= 0.0 {
            return Err(config(format!("probe tolerance must be > 0, got {}", self.tolerance)));
        }
        if !(self.l2 >= 0.0 && self.l2.is_finite()) {
            return Err(config(format!("probe l2 must be >= 0, got {}", self.l2)));
        }
        if self.max_iterations == 0 {
            return Err(config("probe needs at least one iteration"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeModel {
    pub dim: usize,
    pub num_classes: usize,
    /// Row-major `dim × num_classes`.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    /// Objective value before the first and after every accepted step.
    pub loss_history: Vec<f64>,
    pub converged: bool,
}

impl ProbeModel {
    pub fn scores(&self, x: &[f64]) -> Vec<f64> {
        let c = self.num_classes;
        let mut out = self.bias.clone();
        for (i, &xi) in x.iter().enumerate() {
            for (o, w) in out.iter_mut().zip(&self.weights[i * c..(i + 1) * c]) {
                *o += xi * w;
            }
        }
        out
    }

    /// Highest-scoring class; ties go to the lowest index.
    pub fn predict(&self, x: &[f64]) -> usize {
        let s = self.scores(x);
        let mut best = 0;
        for (k, &v) in s.iter().enumerate().skip(1) {
            if v > s[best] {
                best = k;
            }
        }
        best
    }

    pub fn final_loss(&self) -> f64 {
        *self.loss_history.last().expect("history starts with the initial loss")
    }
}

struct Problem<'a, X> {
    x: &'a [X],
    labels: &'a [usize],
    dim: usize,
    c: usize,
    l2: f64,
}

impl<X: AsRef<[f64]>> Problem<'_, X> {
    /// Objective and gradient at `theta = [W (dim × c) | b (c)]`.
    fn eval(&self, theta: &[f64], want_grad: bool) -> (f64, Vec<f64>) {
        let (d, c) = (self.dim, self.c);
        let n = self.x.len() as f64;
        let (w, b) = theta.split_at(d * c);
        let mut grad = if want_grad { vec![0.0; theta.len()] } else { Vec::new() };
        let mut nll = 0.0;
        let mut scores = vec![0.0; c];
        for (xi, &y) in self.x.iter().zip(self.labels) {
            let xi = xi.as_ref();
            scores.copy_from_slice(b);
            for (j, &v) in xi.iter().enumerate() {
                for (s, wj) in scores.iter_mut().zip(&w[j * c..(j + 1) * c]) {
                    *s += v * wj;
                }
            }
            let lp = log_softmax_unchecked(&scores);
            nll -= lp[y];
            if want_grad {
                for k in 0..c {
                    let g = (lp[k].exp() - if k == y { 1.0 } else { 0.0 }) / n;
                    for (j, &v) in xi.iter().enumerate() {
                        grad[j * c + k] += g * v;
                    }
                    grad[d * c + k] += g;
                }
            }
        }
        let reg: f64 = w.iter().map(|v| v * v).sum::<f64>() * 0.5 * self.l2;
        if want_grad {
            for (g, v) in grad[..d * c].iter_mut().zip(w) {
                *g += self.l2 * v;
            }
        }
        (nll / n + reg, grad)
    }
}

/// Fits the probe on `embeddings` with class ids in `0..num_classes`.
pub fn fit_probe<X: AsRef<[f64]>>(
    embeddings: &[X],
    labels: &[usize],
    num_classes: usize,
    cfg: &ProbeConfig,
) -> Result<ProbeModel> {
    cfg.validate()?;
    if embeddings.len() != labels.len() {
        return Err(shape(format!("{} embeddings but {} labels", embeddings.len(), labels.len())));
    }
    if embeddings.is_empty() {
        return Err(validation("probe training set is empty"));
    }
    let dim = embeddings[0].as_ref().len();
    if embeddings.iter().any(|e| e.as_ref().len() != dim) {
        return Err(shape("embeddings differ in dimension"));
    }
    if let Some(bad) = labels.iter().find(|&&y| y >= num_classes) {
        return Err(validation(format!("label {bad} out of range for {num_classes} classes")));
    }
    let first = labels[0];
    if num_classes < 2 || labels.iter().all(|&y| y == first) {
        return Err(validation("probe needs at least two classes in the training data"));
    }

    let c = num_classes;
    let problem = Problem { x: embeddings, labels, dim, c, l2: cfg.l2 };
    let mut theta = vec![0.0; dim * c + c];
    let (mut f, mut g) = problem.eval(&theta, true);
    let mut history = vec![f];
    let mut step = 1.0;
    let mut converged = false;

    for _ in 0..cfg.max_iterations {
        let g2: f64 = g.iter().map(|v| v * v).sum();
        if g2 == 0.0 {
            converged = true;
            break;
        }
        let mut accepted = None;
        while step > 1e-20 {
            let trial: Vec<f64> = theta.iter().zip(&g).map(|(t, gi)| t - step * gi).collect();
            let (ft, _) = problem.eval(&trial, false);
            if ft <= f - 1e-4 * step * g2 {
                accepted = Some((trial, ft));
                break;
            }
            step *= 0.5;
        }
        let Some((next, fn_)) = accepted else {
            converged = true;
            break;
        };
        let delta = f - fn_;
        theta = next;
        f = fn_;
        history.push(f);
        if delta < cfg.tolerance {
            converged = true;
            break;
        }
        g = problem.eval(&theta, true).1;
        step *= 2.0;
    }

    let bias = theta.split_off(dim * c);
    Ok(ProbeModel { dim, num_classes: c, weights: theta, bias, loss_history: history, converged })
}

/// Fraction of points whose predicted class equals the label.
pub fn probe_accuracy<X: AsRef<[f64]>>(model: &ProbeModel, embeddings: &[X], labels: &[usize]) -> Result<f64> {
    if embeddings.len() != labels.len() {
        return Err(shape(format!("{} embeddings but {} labels", embeddings.len(), labels.len())));
    }
    if embeddings.is_empty() {
        return Err(validation("cannot score an empty evaluation set"));
    }
    let mut correct = 0usize;
    for (x, &y) in embeddings.iter().zip(labels) {
        let x = x.as_ref();
        if x.len() != model.dim {
            return Err(shape(format!("embedding dim {} vs probe dim {}", x.len(), model.dim)));
        }
        correct += usize::from(model.predict(x) == y);
    }
    Ok(correct as f64 / embeddings.len() as f64)
}

/// Serialized outcome of probing one encoder on one dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeResult {
    pub encoder_id: String,
    pub dataset: String,
    pub split: Split,
    pub accuracy: f64,
    pub n_train: usize,
    pub n_test: usize,
    pub config: ProbeConfig,
}

/// Embeds the train and test splits with frozen `params`, fits the probe on
/// train and scores it on test.
pub fn probe_encoder(
    params: &EncoderParams,
    corpus: &StyleCorpus,
    dataset: &str,
    cfg: &ProbeConfig,
) -> Result<(ProbeModel, ProbeResult)> {
    let embed = |split| -> Result<(Vec<Vec<f64>>, Vec<usize>)> {
        let ids = corpus.split_ids(split);
        let emb = encode_all(params, ids.iter().map(|&id| corpus.sentence(id)))?;
        let labels = ids.iter().map(|&id| corpus.sentence(id).style).collect();
        Ok((emb.into_iter().map(|e| e.into_vec()).collect(), labels))
    };
    let (xtr, ytr) = embed(Split::Train)?;
    let (xte, yte) = embed(Split::Test)?;
    let model = fit_probe(&xtr, &ytr, corpus.num_styles(), cfg)?;
    let accuracy = probe_accuracy(&model, &xte, &yte)?;
    let result = ProbeResult {
        encoder_id: params.fingerprint(),
        dataset: dataset.to_string(),
        split: Split::Test,
        accuracy,
        n_train: xtr.len(),
        n_test: xte.len(),
        config: cfg.clone(),
    };
    Ok((model, result))
}
