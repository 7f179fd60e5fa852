//! Loss functions over a batch of unit-norm embeddings.
//!
//! For an anchor `x`, the candidate set is every other batch member. The
//! probability that candidate `x̃` shares the anchor's style is the softmax
//! of inner products `f(x)ᵀf(x̃)` over the candidates, and the contrastive
//! loss is the negative log-probability of every same-style candidate,
//! summed per anchor and averaged over the batch.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{config, shape, validation, Error, Result};
use crate::numeric::{dot_unchecked, log_softmax, log_softmax_unchecked};

/// Which loss drives fine-tuning.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LossMode {
    #[serde(rename = "CL")]
    Cl,
    #[serde(rename = "CEL")]
    Cel,
    #[serde(rename = "CEL+CL")]
    CelCl,
}

impl LossMode {
    pub fn as_str(self) -> &'static str {
        match self {
            LossMode::Cl => "CL",
            LossMode::Cel => "CEL",
            LossMode::CelCl => "CEL+CL",
        }
    }

    pub fn needs_classifier(self) -> bool {
        !matches!(self, LossMode::Cl)
    }
}

impl fmt::Display for LossMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LossMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "CL" | "cl" => Ok(LossMode::Cl),
            "CEL" | "cel" => Ok(LossMode::Cel),
            "CEL+CL" | "cel+cl" => Ok(LossMode::CelCl),
            other => Err(config(format!("unknown loss mode {other:?}"))),
        }
    }
}

/// Loss mode plus its weights and the similarity temperature.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossSpec {
    pub mode: LossMode,
    pub weight_cl: f64,
    pub weight_cel: f64,
    /// Inner products are divided by this; 1.0 leaves them untouched.
    pub temperature: f64,
}

impl LossSpec {
    pub fn new(mode: LossMode) -> Self {
        Self { mode, weight_cl: 1.0, weight_cel: 1.0, temperature: 1.0 }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.temperature.is_finite() || self.temperature <= 0.0 {
            return Err(config(format!("temperature must be > 0, got {}", self.temperature)));
        }
        if self.mode == LossMode::CelCl {
            check_weights(self.weight_cl, self.weight_cel)?;
        }
        Ok(())
    }
}

/// Anchor, its candidates (everyone else) and the same-style positives.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CandidateSet {
    pub anchor_index: usize,
    pub candidate_indices: Vec<usize>,
    pub positive_indices: Vec<usize>,
}

impl CandidateSet {
    pub fn for_anchor(anchor_index: usize, styles: &[usize]) -> Result<Self> {
        if anchor_index >= styles.len() {
            return Err(shape(format!("anchor {anchor_index} outside batch of {}", styles.len())));
        }
        let candidate_indices: Vec<usize> = (0..styles.len()).filter(|&j| j != anchor_index).collect();
        let positive_indices: Vec<usize> =
            candidate_indices.iter().copied().filter(|&j| styles[j] == styles[anchor_index]).collect();
        if positive_indices.is_empty() {
            return Err(validation(format!("anchor {anchor_index} has no same-style partner in the batch")));
        }
        Ok(Self { anchor_index, candidate_indices, positive_indices })
    }
}

/// Log-probability of each candidate under the softmax of inner products
/// with the anchor.
pub fn candidate_log_probs<A, C>(anchor: A, candidates: &[C]) -> Result<Vec<f64>>
where
    A: AsRef<[f64]>,
    C: AsRef<[f64]>,
{
    let anchor = anchor.as_ref();
    if candidates.is_empty() {
        return Err(shape("no candidates"));
    }
    let scores = candidates
        .iter()
        .map(|c| {
            let c = c.as_ref();
            if c.len() != anchor.len() {
                return Err(shape(format!("candidate dim {} vs anchor dim {}", c.len(), anchor.len())));
            }
            Ok(dot_unchecked(anchor, c))
        })
        .collect::<Result<Vec<_>>>()?;
    log_softmax(&scores)
}

fn check_batch<E: AsRef<[f64]>>(embeddings: &[E], styles: &[usize]) -> Result<usize> {
    if embeddings.len() != styles.len() {
        return Err(shape(format!("{} embeddings but {} styles", embeddings.len(), styles.len())));
    }
    if embeddings.len() < 2 {
        return Err(shape("contrastive loss needs at least 2 sentences"));
    }
    let dim = embeddings[0].as_ref().len();
    if dim == 0 || embeddings.iter().any(|e| e.as_ref().len() != dim) {
        return Err(shape("embeddings must share one non-zero dimension"));
    }
    Ok(dim)
}

/// Contrastive loss and its gradient with respect to each embedding.
pub fn contrastive_loss_and_grad<E: AsRef<[f64]>>(
    embeddings: &[E],
    styles: &[usize],
    temperature: f64,
) -> Result<(f64, Vec<Vec<f64>>)> {
    let dim = check_batch(embeddings, styles)?;
    let b = embeddings.len();
    let bf = b as f64;
    let emb: Vec<&[f64]> = embeddings.iter().map(AsRef::as_ref).collect();

    let mut sims = vec![0.0; b * b];
    for i in 0..b {
        for j in i + 1..b {
            let s = dot_unchecked(emb[i], emb[j]) / temperature;
            sims[i * b + j] = s;
            sims[j * b + i] = s;
        }
    }

    let mut loss = 0.0;
    let mut grads = vec![vec![0.0; dim]; b];
    for i in 0..b {
        let set = CandidateSet::for_anchor(i, styles)?;
        let scores: Vec<f64> = set.candidate_indices.iter().map(|&j| sims[i * b + j]).collect();
        let log_p = log_softmax_unchecked(&scores);
        let n_pos = set.positive_indices.len() as f64;
        for (k, &j) in set.candidate_indices.iter().enumerate() {
            let is_pos = styles[j] == styles[i];
            if is_pos {
                loss -= log_p[k];
            }
            // dL/dsim_ij for this anchor's term.
            let g = (n_pos * log_p[k].exp() - if is_pos { 1.0 } else { 0.0 }) / (bf * temperature);
            for d in 0..dim {
                grads[i][d] += g * emb[j][d];
                grads[j][d] += g * emb[i][d];
            }
        }
    }
    Ok((loss / bf, grads))
}

pub fn contrastive_loss_with_temperature<E: AsRef<[f64]>>(
    embeddings: &[E],
    styles: &[usize],
    temperature: f64,
) -> Result<f64> {
    check_batch(embeddings, styles)?;
    let b = embeddings.len();
    let mut loss = 0.0;
    for i in 0..b {
        let set = CandidateSet::for_anchor(i, styles)?;
        let scores: Vec<f64> = set
            .candidate_indices
            .iter()
            .map(|&j| dot_unchecked(embeddings[i].as_ref(), embeddings[j].as_ref()) / temperature)
            .collect();
        let log_p = log_softmax_unchecked(&scores);
        for (k, &j) in set.candidate_indices.iter().enumerate() {
            if styles[j] == styles[i] {
                loss -= log_p[k];
            }
        }
    }
    Ok(loss / b as f64)
}

/// Batch-averaged multi-positive contrastive loss with plain inner products.
pub fn contrastive_loss<E: AsRef<[f64]>>(embeddings: &[E], styles: &[usize]) -> Result<f64> {
    contrastive_loss_with_temperature(embeddings, styles, 1.0)
}

fn check_logits<L: AsRef<[f64]>>(logits: &[L], labels: &[usize]) -> Result<usize> {
    if logits.len() != labels.len() {
        return Err(shape(format!("{} logit rows but {} labels", logits.len(), labels.len())));
    }
    if logits.is_empty() {
        return Err(shape("cross-entropy over an empty batch"));
    }
    let c = logits[0].as_ref().len();
    if c == 0 || logits.iter().any(|l| l.as_ref().len() != c) {
        return Err(shape("logit rows must share one non-zero width"));
    }
    if let Some(bad) = labels.iter().find(|&&y| y >= c) {
        return Err(validation(format!("label {bad} out of range for {c} classes")));
    }
    Ok(c)
}

/// Mean negative log-likelihood and its gradient with respect to the logits.
pub fn cross_entropy_loss_and_grad<L: AsRef<[f64]>>(logits: &[L], labels: &[usize]) -> Result<(f64, Vec<Vec<f64>>)> {
    check_logits(logits, labels)?;
    let n = logits.len() as f64;
    let mut loss = 0.0;
    let mut grads = Vec::with_capacity(logits.len());
    for (row, &y) in logits.iter().zip(labels) {
        let log_p = log_softmax(row.as_ref())?;
        loss -= log_p[y];
        let mut g: Vec<f64> = log_p.iter().map(|lp| lp.exp() / n).collect();
        g[y] -= 1.0 / n;
        grads.push(g);
    }
    Ok((loss / n, grads))
}

pub fn cross_entropy_loss<L: AsRef<[f64]>>(logits: &[L], labels: &[usize]) -> Result<f64> {
    Ok(cross_entropy_loss_and_grad(logits, labels)?.0)
}

fn check_weights(weight_cl: f64, weight_cel: f64) -> Result<()> {
    if !(weight_cl >= 0.0 && weight_cel >= 0.0) {
        return Err(config(format!("loss weights must be >= 0, got ({weight_cl}, {weight_cel})")));
    }
    if weight_cl == 0.0 && weight_cel == 0.0 {
        return Err(config("loss weights cannot both be zero"));
    }
    Ok(())
}

/// `weight_cel·cel + weight_cl·cl`.
pub fn combined_loss(cl: f64, cel: f64, weight_cl: f64, weight_cel: f64) -> Result<f64> {
    check_weights(weight_cl, weight_cel)?;
    Ok(weight_cel * cel + weight_cl * cl)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::{finite_diff_grad, l2_normalize, relative_error};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_unit(rng: &mut impl Rng, d: usize) -> Vec<f64> {
        let v: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        l2_normalize(&v).unwrap()
    }

    #[test]
    fn candidate_probabilities() {
        let same = vec![vec![0.6, 0.8]; 4];
        for lp in candidate_log_probs([1.0, 0.0], &same).unwrap() {
            assert!((lp.exp() - 0.25).abs() < 1e-15);
        }

        // 50-digit reference: e/(e+1), 1/(e+1).
        let lp = candidate_log_probs([1.0, 0.0], &[[1.0, 0.0], [0.0, 1.0]]).unwrap();
        assert!((lp[0].exp() - 0.73105857863000487925).abs() < 1e-15);
        assert!((lp[1].exp() - 0.26894142136999512075).abs() < 1e-15);

        let rev = candidate_log_probs([1.0, 0.0], &[[0.0, 1.0], [1.0, 0.0]]).unwrap();
        assert_eq!(rev[0], lp[1]);
        assert_eq!(rev[1], lp[0]);

        assert!(matches!(candidate_log_probs([1.0], &Vec::<Vec<f64>>::new()), Err(Error::Shape(_))));
        assert!(matches!(candidate_log_probs([1.0], &[[1.0, 0.0]]), Err(Error::Shape(_))));
    }

    #[test]
    fn contrastive_reference_values() {
        let same = vec![vec![1.0, 0.0]; 4];
        let loss = contrastive_loss(&same, &[0, 0, 1, 1]).unwrap();
        assert!((loss - 1.0986122886681096914).abs() < 1e-15, "{loss}");

        let split = vec![vec![1.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0], vec![0.0, 1.0]];
        let loss = contrastive_loss(&split, &[0, 0, 1, 1]).unwrap();
        assert!((loss - 0.55144471393205108906).abs() < 1e-15, "{loss}");

        let permuted = vec![split[2].clone(), split[0].clone(), split[3].clone(), split[1].clone()];
        let loss_p = contrastive_loss(&permuted, &[1, 0, 1, 0]).unwrap();
        assert!((loss - loss_p).abs() < 1e-15);
    }

    #[test]
    fn contrastive_rejects_lonely_anchor() {
        let e = vec![vec![1.0, 0.0]; 3];
        assert!(matches!(contrastive_loss(&e, &[0, 0, 1]), Err(Error::Validation(_))));
        assert!(matches!(contrastive_loss(&e[..1], &[0]), Err(Error::Shape(_))));
    }

    #[test]
    fn contrastive_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for trial in 0..20 {
            let b = 4 + 2 * (trial % 3);
            let d = 3 + trial % 4;
            let styles: Vec<usize> = (0..b).map(|i| i % 2).collect();
            let flat: Vec<f64> = (0..b).flat_map(|_| random_unit(&mut rng, d)).collect();
            let tau = if trial % 2 == 0 { 1.0 } else { 0.5 };
            let rows = |x: &[f64]| x.chunks(d).map(<[f64]>::to_vec).collect::<Vec<_>>();
            let (_, g) = contrastive_loss_and_grad(&rows(&flat), &styles, tau).unwrap();
            let analytic: Vec<f64> = g.concat();
            let numeric =
                finite_diff_grad(|x| contrastive_loss_with_temperature(&rows(x), &styles, tau), &flat, 1e-5).unwrap();
            assert!(relative_error(&analytic, &numeric) < 1e-7);
        }
    }

    #[test]
    fn loss_paths_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let e: Vec<Vec<f64>> = (0..6).map(|_| random_unit(&mut rng, 4)).collect();
        let styles = [0, 1, 0, 1, 1, 0];
        let a = contrastive_loss(&e, &styles).unwrap();
        let (b, _) = contrastive_loss_and_grad(&e, &styles, 1.0).unwrap();
        assert!((a - b).abs() < 1e-14);
    }

    #[test]
    fn cross_entropy_reference_values() {
        let loss = cross_entropy_loss(&[[0.0, 0.0]], &[1]).unwrap();
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-15);

        let loss = cross_entropy_loss(&[[50.0, 0.0]], &[0]).unwrap();
        assert!(loss < 1e-20);

        // 50-digit reference evaluation.
        let loss = cross_entropy_loss(&[[1.0, 2.0, 3.0]], &[2]).unwrap();
        assert!((loss - 0.40760596444438030448).abs() < 1e-15);

        assert!(matches!(cross_entropy_loss(&[[1.0, 2.0]], &[2]), Err(Error::Validation(_))));
        assert!(matches!(cross_entropy_loss(&[[1.0, 2.0]], &[0, 1]), Err(Error::Shape(_))));
    }

    #[test]
    fn cross_entropy_gradient_matches_finite_differences() {
        let logits = vec![0.3, -1.2, 2.0, 0.1, 0.4, -0.5];
        let labels = [2, 0];
        let rows = |x: &[f64]| x.chunks(3).map(<[f64]>::to_vec).collect::<Vec<_>>();
        let (_, g) = cross_entropy_loss_and_grad(&rows(&logits), &labels).unwrap();
        let numeric = finite_diff_grad(|x| cross_entropy_loss(&rows(x), &labels), &logits, 1e-5).unwrap();
        assert!(relative_error(&g.concat(), &numeric) < 1e-8);
    }

    #[test]
    fn combined_loss_examples() {
        assert!((combined_loss(0.5, 0.7, 1.0, 1.0).unwrap() - 1.2).abs() < 1e-15);
        assert_eq!(combined_loss(0.5, 0.7, 0.0, 1.0).unwrap(), 0.7);
        assert_eq!(combined_loss(0.5, 0.7, 1.0, 0.0).unwrap(), 0.5);
        assert!(matches!(combined_loss(0.5, 0.7, 0.0, 0.0), Err(Error::Config(_))));
        assert!(matches!(combined_loss(0.5, 0.7, -1.0, 1.0), Err(Error::Config(_))));
    }

    #[test]
    fn loss_mode_names() {
        for m in [LossMode::Cl, LossMode::Cel, LossMode::CelCl] {
            assert_eq!(m.as_str().parse::<LossMode>().unwrap(), m);
            assert_eq!(serde_json::to_string(&m).unwrap(), format!("\"{}\"", m.as_str()));
        }
        assert!("PT".parse::<LossMode>().is_err());
    }
}
