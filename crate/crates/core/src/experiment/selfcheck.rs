//! Numerical and contract self-checks behind `stylecl check`, also driven
//! with full trial counts by the acceptance suite.

use std::collections::HashSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::Sentence;
use crate::encoder::{batch_loss, forward_backward, EncoderDims, EncoderParams};
use crate::numeric::{finite_diff_grad, l2_normalize, relative_error};
use crate::objectives::{candidate_log_probs, contrastive_loss, LossMode, LossSpec};
use crate::probe::{fit_probe, probe_accuracy, ProbeConfig};
use crate::sampling::{Sampler, SamplerMode};
use crate::training::lr_schedule;
use crate::Error;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl CheckOutcome {
    fn new(name: &str, passed: bool, detail: String) -> Self {
        Self { name: name.to_string(), passed, detail }
    }
}

fn random_unit(rng: &mut impl Rng, d: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        if let Ok(u) = l2_normalize(&v) {
            return u;
        }
    }
}

/// Worst relative error between analytic and central-difference gradients
/// over `trials` random encoders per loss mode (dims ≤ 8, batch 4–8).
pub fn gradient_check(trials: usize, seed: u64) -> CheckOutcome {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = Vec::new();
    let mut passed = true;
    for mode in [LossMode::Cl, LossMode::Cel, LossMode::CelCl] {
        let mut worst: f64 = 0.0;
        for _ in 0..trials {
            let dims = EncoderDims {
                vocab_size: rng.random_range(3..=8),
                embed_dim: rng.random_range(2..=8),
                hidden_dim: rng.random_range(2..=8),
                out_dim: rng.random_range(2..=8),
                num_classes: Some(2),
            };
            let params = EncoderParams::init(dims, 0.1, rng.random()).expect("valid dims");
            let b = 2 * rng.random_range(2..=4);
            let batch: Vec<Sentence> = (0..b)
                .map(|i| Sentence {
                    id: i,
                    tokens: (0..rng.random_range(1..=4)).map(|_| rng.random_range(0..dims.vocab_size as u32)).collect(),
                    raw_text: String::new(),
                    style: i % 2,
                })
                .collect();
            let refs: Vec<&Sentence> = batch.iter().collect();
            let spec = LossSpec::new(mode);
            // A mask that zeroes every pooled coordinate of a tiny encoder
            // leaves the projection at its zero bias; redraw such masks.
            let mut dropout = Some(rng.random());
            for _ in 0..100 {
                if !matches!(batch_loss(&params, &refs, &spec, dropout), Err(Error::Degenerate(_))) {
                    break;
                }
                dropout = Some(rng.random());
            }
            let result = forward_backward(&params, &refs, &spec, dropout).and_then(|(_, analytic)| {
                let numeric = finite_diff_grad(
                    |v| batch_loss(&EncoderParams::from_values(dims, 0.1, v.to_vec())?, &refs, &spec, dropout),
                    params.values(),
                    1e-5,
                )?;
                Ok(relative_error(&analytic, &numeric))
            });
            match result {
                Ok(err) => worst = worst.max(err),
                Err(e) => {
                    worst = f64::INFINITY;
                    report.push(format!("{mode}: {e}"));
                }
            }
        }
        passed &= worst <= 1e-4;
        report.push(format!("{mode} worst {worst:.2e} over {trials}"));
    }
    CheckOutcome::new("gradient check", passed, report.join("; "))
}

/// Literal evaluation of the candidate probabilities and the batch
/// objective: explicit exponentials and sums, no log-sum-exp.
pub fn brute_force_contrastive(embeddings: &[Vec<f64>], styles: &[usize]) -> f64 {
    let b = embeddings.len();
    let sim = |i: usize, j: usize| -> f64 { embeddings[i].iter().zip(&embeddings[j]).map(|(a, c)| a * c).sum() };
    let mut total = 0.0;
    for x in 0..b {
        let x_cand: Vec<usize> = (0..b).filter(|&k| k != x).collect();
        let x_s: Vec<usize> = x_cand.iter().copied().filter(|&k| styles[k] == styles[x]).collect();
        let denom: f64 = x_cand.iter().map(|&k| sim(x, k).exp()).sum();
        for &pos in &x_s {
            total += (sim(x, pos).exp() / denom).ln();
        }
    }
    -total / b as f64
}

/// Compares [`contrastive_loss`] against [`brute_force_contrastive`] on
/// random two-style batches (size ≤ 8, d ≤ 8).
pub fn contrastive_oracle_check(batches: usize, seed: u64) -> CheckOutcome {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..batches {
        let half = rng.random_range(2..=4);
        let d = rng.random_range(2..=8);
        let emb: Vec<Vec<f64>> = (0..2 * half).map(|_| random_unit(&mut rng, d)).collect();
        let mut styles: Vec<usize> = (0..2 * half).map(|i| i / half).collect();
        rand::seq::SliceRandom::shuffle(&mut styles[..], &mut rng);
        let got = contrastive_loss(&emb, &styles).unwrap_or(f64::NAN);
        let diff = (got - brute_force_contrastive(&emb, &styles)).abs();
        worst = if diff.is_nan() { f64::INFINITY } else { worst.max(diff) };
    }
    CheckOutcome::new(
        "contrastive loss vs brute force",
        worst <= 1e-12,
        format!("max |diff| {worst:.2e} over {batches} batches"),
    )
}

/// `exp(candidate_log_probs)` sums to one for random sets whose scores
/// reach ±50.
pub fn softmax_normalization_check(sets: usize, seed: u64) -> CheckOutcome {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    let mut extreme = 0;
    for i in 0..sets {
        let d = rng.random_range(1..=8);
        let n = rng.random_range(1..=16);
        // Every fourth set is scaled so that scores span [-50, 50].
        let scale = if i % 4 == 0 { 50.0 } else { 1.0 };
        let mut anchor = random_unit(&mut rng, d);
        for a in &mut anchor {
            *a *= scale;
        }
        let cands: Vec<Vec<f64>> = (0..n).map(|_| random_unit(&mut rng, d)).collect();
        if scale > 1.0 {
            extreme += 1;
        }
        let sum: f64 = match candidate_log_probs(&anchor, &cands) {
            Ok(lp) => lp.iter().map(|v| v.exp()).sum(),
            Err(_) => f64::INFINITY,
        };
        worst = worst.max((sum - 1.0).abs());
    }
    CheckOutcome::new(
        "softmax normalization",
        worst <= 1e-9,
        format!("max |Σp − 1| {worst:.2e} over {sets} sets ({extreme} with scores up to ±50)"),
    )
}

fn two_style_pools(n: usize) -> Vec<Vec<usize>> {
    vec![(0..n).collect(), (n..2 * n).collect()]
}

/// Pairwise mode never repeats a cross-style pair over a whole run on a
/// 20 + 20 corpus, and exhausts on the second call for A(2), B(2), B = 4.
pub fn pairwise_sampler_check(seed: u64) -> CheckOutcome {
    let mut s = Sampler::from_pools(SamplerMode::PairwiseNoReplacement, two_style_pools(20), 4, seed, 2)
        .expect("valid sampler");
    let mut seen = HashSet::new();
    let mut repeats = 0;
    let mut batches = 0;
    while let Some(b) = s.next_batch() {
        batches += 1;
        for p in b.cross_pairs() {
            if !seen.insert(p) {
                repeats += 1;
            }
        }
        if batches % 10 == 0 {
            s.epoch_reset();
        }
    }
    let mut small =
        Sampler::from_pools(SamplerMode::PairwiseNoReplacement, two_style_pools(2), 4, seed, 2).expect("valid sampler");
    let first = small.next_batch().map(|b| b.cross_pairs().len());
    let second = small.next_batch();
    let passed = repeats == 0 && batches > 0 && first == Some(4) && second.is_none();
    CheckOutcome::new(
        "pairwise sampler",
        passed,
        format!(
            "{batches} batches, {} distinct cross pairs, {repeats} repeats; A(2),B(2): first covers {:?} pairs, second exhausted = {}",
            seen.len(),
            first,
            second.is_none()
        ),
    )
}

/// Corpus mode: each id at most once per epoch, ⌊n/(B/2)⌋ batches per
/// epoch on two equal styles, and A(4), B(4), B = 4 gives exactly 2.
pub fn corpus_sampler_check(seed: u64) -> CheckOutcome {
    let mut problems = Vec::new();
    for (n, b, epochs) in [(4usize, 4usize, 3usize), (20, 4, 3), (21, 8, 3), (37, 6, 2)] {
        let mut s = Sampler::from_pools(SamplerMode::CorpusNoReplacement, two_style_pools(n), b, seed, 2)
            .expect("valid sampler");
        for epoch in 0..epochs {
            let mut ids = HashSet::new();
            let mut count = 0;
            while let Some(batch) = s.next_batch() {
                count += 1;
                for id in batch.sentence_ids {
                    if !ids.insert(id) {
                        problems.push(format!("n={n} B={b} epoch {epoch}: id {id} reused"));
                    }
                }
            }
            let want = n / (b / 2);
            if count != want {
                problems.push(format!("n={n} B={b} epoch {epoch}: {count} batches, expected {want}"));
            }
            s.epoch_reset();
        }
    }
    let detail =
        if problems.is_empty() { "all epochs matched the counted schedule".into() } else { problems.join("; ") };
    CheckOutcome::new("corpus sampler", problems.is_empty(), detail)
}

/// Random mode: per-sentence counts over `batches` batches lie within 5σ
/// of the binomial expectation.
pub fn random_sampler_check(batches: usize, seed: u64) -> CheckOutcome {
    let n = 10;
    let b = 4;
    let mut s =
        Sampler::from_pools(SamplerMode::RandomReplacement, two_style_pools(n), b, seed, 2).expect("valid sampler");
    let mut counts = vec![0usize; 2 * n];
    for _ in 0..batches {
        for id in s.next_batch().expect("random mode never exhausts").sentence_ids {
            counts[id] += 1;
        }
    }
    // Each batch makes B/2 uniform draws from each style's n sentences.
    let trials = (batches * b / 2) as f64;
    let p = 1.0 / n as f64;
    let mean = trials * p;
    let sd = (trials * p * (1.0 - p)).sqrt();
    let worst = counts.iter().map(|&c| (c as f64 - mean).abs() / sd).fold(0.0, f64::max);
    CheckOutcome::new(
        "random sampler uniformity",
        worst <= 5.0,
        format!("max deviation {worst:.2}σ over {batches} batches"),
    )
}

/// lr at steps 5, 10, 55, 100 of a 100-step schedule with 10% warmup.
pub fn schedule_check() -> CheckOutcome {
    let p = 1e-2;
    let want = [(5, 0.5 * p), (10, p), (55, 0.5 * p), (100, 0.0)];
    let got: Vec<(usize, f64)> =
        want.iter().map(|&(s, _)| (s, lr_schedule(s, 100, p, 0.1).unwrap_or(f64::NAN))).collect();
    let passed = want.iter().zip(&got).all(|(w, g)| w.1 == g.1);
    CheckOutcome::new("lr schedule", passed, format!("{got:?}"))
}

/// Separable clusters reach 100%, constant embeddings reach 1/C, and the
/// probe objective never increases.
pub fn probe_check(seed: u64) -> CheckOutcome {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = Vec::new();
    let mut y = Vec::new();
    for class in 0..2usize {
        for _ in 0..100 {
            let a = rng.random_range(0.5..2.0);
            x.push(vec![if class == 0 { -a } else { a }, rng.random_range(-1.0..1.0)]);
            y.push(class);
        }
    }
    let cfg = ProbeConfig::default();
    let sep = fit_probe(&x, &y, 2, &cfg).and_then(|m| Ok((probe_accuracy(&m, &x, &y)?, m)));
    let mut details = Vec::new();
    let mut passed = true;
    match sep {
        Ok((acc, m)) => {
            let monotone = m.loss_history.windows(2).all(|w| w[1] <= w[0]);
            passed &= acc == 1.0 && monotone;
            details.push(format!("separable accuracy {acc}, loss non-increasing {monotone}"));
        }
        Err(e) => {
            passed = false;
            details.push(e.to_string());
        }
    }
    for c in [2usize, 3, 5] {
        let xc = vec![vec![0.25, -0.5, 0.75]; 4 * c];
        let yc: Vec<usize> = (0..4 * c).map(|i| i % c).collect();
        let acc = fit_probe(&xc, &yc, c, &cfg).and_then(|m| probe_accuracy(&m, &xc, &yc)).unwrap_or(f64::NAN);
        passed &= (acc - 1.0 / c as f64).abs() < 1e-12;
        details.push(format!("constant C={c}: {acc:.4}"));
    }
    CheckOutcome::new("probe sanity", passed, details.join("; "))
}

/// Every check with the trial counts used by the acceptance suite.
pub fn run_all(seed: u64) -> Vec<CheckOutcome> {
    vec![
        gradient_check(20, seed),
        contrastive_oracle_check(100, seed),
        softmax_normalization_check(1000, seed),
        pairwise_sampler_check(seed),
        corpus_sampler_check(seed),
        random_sampler_check(10_000, seed),
        schedule_check(),
        probe_check(seed),
    ]
}
