//! Scalar and vector primitives shared by every other module.
//!
//! All arithmetic is `f64`. Probabilities are only ever exposed as the
//! exponential of a log-probability produced by [`log_softmax`].

use serde::{Deserialize, Serialize};

use crate::error::{config, shape, Error, Result};

/// Inner product of two equal-length, non-empty vectors.
pub fn dot(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(shape(format!("dot: lengths {} and {}", u.len(), v.len())));
    }
    if u.is_empty() {
        return Err(shape("dot: empty vectors"));
    }
    Ok(dot_unchecked(u, v))
}

#[inline]
pub(crate) fn dot_unchecked(u: &[f64], v: &[f64]) -> f64 {
    u.iter().zip(v).map(|(a, b)| a * b).sum()
}

pub fn norm(v: &[f64]) -> f64 {
    dot_unchecked(v, v).sqrt()
}

/// Scales `v` onto the unit sphere.
pub fn l2_normalize(v: &[f64]) -> Result<Vec<f64>> {
    let n = norm(v);
    if n == 0.0 || !n.is_finite() {
        return Err(Error::Degenerate(format!("cannot normalize vector with norm {n}")));
    }
    Ok(v.iter().map(|x| x / n).collect())
}

/// Log of the softmax of `scores`, computed with max-subtraction.
pub fn log_softmax(scores: &[f64]) -> Result<Vec<f64>> {
    if scores.is_empty() {
        return Err(shape("log_softmax: empty input"));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::Degenerate("log_softmax: non-finite score".into()));
    }
    Ok(log_softmax_unchecked(scores))
}

pub(crate) fn log_softmax_unchecked(scores: &[f64]) -> Vec<f64> {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = scores.iter().map(|s| (s - max).exp()).sum();
    let lse = max + sum.ln();
    scores.iter().map(|s| s - lse).collect()
}

/// Moment estimates and hyperparameters of an Adam optimizer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub first_moment: Vec<f64>,
    pub second_moment: Vec<f64>,
    pub step_count: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamState {
    pub const DEFAULT_BETA1: f64 = 0.9;
    pub const DEFAULT_BETA2: f64 = 0.999;
    pub const DEFAULT_EPSILON: f64 = 1e-8;

    /// Zero moments for `n_params` parameters with the usual defaults.
    pub fn new(n_params: usize) -> Self {
        Self::with_hyperparameters(n_params, Self::DEFAULT_BETA1, Self::DEFAULT_BETA2, Self::DEFAULT_EPSILON)
    }

    pub fn with_hyperparameters(n_params: usize, beta1: f64, beta2: f64, epsilon: f64) -> Self {
        Self {
            first_moment: vec![0.0; n_params],
            second_moment: vec![0.0; n_params],
            step_count: 0,
            beta1,
            beta2,
            epsilon,
        }
    }

    /// Applies one bias-corrected Adam update to `params` in place.
    pub fn update(&mut self, params: &mut [f64], grads: &[f64], lr: f64) -> Result<()> {
        if params.len() != grads.len() || params.len() != self.first_moment.len() {
            return Err(shape(format!(
                "adam: params {}, grads {}, state {}",
                params.len(),
                grads.len(),
                self.first_moment.len()
            )));
        }
        if lr.is_nan() || lr < 0.0 {
            return Err(config(format!("adam: learning rate must be >= 0, got {lr}")));
        }
        self.step_count += 1;
        let t = self.step_count as i32;
        let bias1 = 1.0 - self.beta1.powi(t);
        let bias2 = 1.0 - self.beta2.powi(t);
        for (((p, &g), m), v) in
            params.iter_mut().zip(grads).zip(self.first_moment.iter_mut()).zip(self.second_moment.iter_mut())
        {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            let m_hat = *m / bias1;
            let v_hat = *v / bias2;
            *p -= lr * m_hat / (v_hat.sqrt() + self.epsilon);
        }
        Ok(())
    }
}

/// Functional form of [`AdamState::update`]: returns the new parameters and
/// state, leaving the inputs untouched.
pub fn adam_step(params: &[f64], grads: &[f64], state: &AdamState, lr: f64) -> Result<(Vec<f64>, AdamState)> {
    let mut next_params = params.to_vec();
    let mut next_state = state.clone();
    next_state.update(&mut next_params, grads, lr)?;
    Ok((next_params, next_state))
}

/// Central-difference gradient estimate of `loss_fn` at `x`.
pub fn finite_diff_grad<F>(mut loss_fn: F, x: &[f64], eps: f64) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    if eps.is_nan() || eps <= 0.0 {
        return Err(config(format!("finite differences need eps > 0, got {eps}")));
    }
    let mut probe = x.to_vec();
    let mut grad = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let orig = probe[i];
        probe[i] = orig + eps;
        let plus = loss_fn(&probe)?;
        probe[i] = orig - eps;
        let minus = loss_fn(&probe)?;
        probe[i] = orig;
        grad.push((plus - minus) / (2.0 * eps));
    }
    Ok(grad)
}

/// `‖a − b‖ / max(‖a‖, ‖b‖)`, or 0 when both vectors are zero.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let scale = norm(a).max(norm(b));
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}
