//! Batch loss and analytic gradients through the whole encoder.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{EncoderParams, Trace};
use crate::corpus::Sentence;
use crate::error::{config, shape, Result};
use crate::objectives::{contrastive_loss_and_grad, cross_entropy_loss_and_grad, LossMode, LossSpec};

fn forward_batch(params: &EncoderParams, sentences: &[&Sentence], dropout_seed: Option<u64>) -> Result<Vec<Trace>> {
    let mut rng = dropout_seed.map(ChaCha8Rng::seed_from_u64);
    sentences
        .iter()
        .map(|s| {
            let mask = rng.as_mut().and_then(|r| params.dropout_mask(r));
            params.forward(&s.tokens, mask)
        })
        .collect()
}

/// Loss of the batch and, when requested, d(loss)/d(embedding) and
/// d(loss)/d(logits) for every sentence.
struct Terms {
    loss: f64,
    d_output: Vec<Vec<f64>>,
    d_logits: Option<Vec<Vec<f64>>>,
}

fn loss_terms(params: &EncoderParams, traces: &[Trace], styles: &[usize], spec: &LossSpec) -> Result<Terms> {
    spec.validate()?;
    if spec.mode.needs_classifier() && !params.has_classifier() {
        return Err(config(format!("loss mode {} needs a classifier head", spec.mode)));
    }
    let (w_cl, w_cel) = match spec.mode {
        LossMode::Cl => (1.0, 0.0),
        LossMode::Cel => (0.0, 1.0),
        LossMode::CelCl => (spec.weight_cl, spec.weight_cel),
    };
    let outputs: Vec<&[f64]> = traces.iter().map(|t| t.output.as_slice()).collect();
    let d = params.dims.out_dim;
    let mut loss = 0.0;
    let mut d_output = vec![vec![0.0; d]; traces.len()];
    if spec.mode != LossMode::Cel {
        let (cl, g) = contrastive_loss_and_grad(&outputs, styles, spec.temperature)?;
        loss += w_cl * cl;
        for (acc, gi) in d_output.iter_mut().zip(g) {
            for (a, v) in acc.iter_mut().zip(gi) {
                *a += w_cl * v;
            }
        }
    }
    let mut d_logits = None;
    if spec.mode.needs_classifier() {
        let logits: Vec<Vec<f64>> = outputs.iter().map(|y| params.logits_unchecked(y)).collect();
        let (cel, mut g) = cross_entropy_loss_and_grad(&logits, styles)?;
        loss += w_cel * cel;
        let c = logits[0].len();
        let head_w = &params.values[params.dims.layout().head_w];
        for (gi, acc) in g.iter_mut().zip(&mut d_output) {
            for v in gi.iter_mut() {
                *v *= w_cel;
            }
            for (k, a) in acc.iter_mut().enumerate() {
                *a += head_w[k * c..(k + 1) * c].iter().zip(gi.iter()).map(|(w, g)| w * g).sum::<f64>();
            }
        }
        d_logits = Some(g);
    }
    Ok(Terms { loss, d_output, d_logits })
}

fn check_sentences(sentences: &[&Sentence]) -> Result<Vec<usize>> {
    if sentences.len() < 2 {
        return Err(shape("a training batch needs at least two sentences"));
    }
    Ok(sentences.iter().map(|s| s.style).collect())
}

/// Loss of one batch without gradients. `dropout_seed = None` runs in eval
/// mode.
pub fn batch_loss(
    params: &EncoderParams,
    sentences: &[&Sentence],
    spec: &LossSpec,
    dropout_seed: Option<u64>,
) -> Result<f64> {
    let styles = check_sentences(sentences)?;
    let traces = forward_batch(params, sentences, dropout_seed)?;
    Ok(loss_terms(params, &traces, &styles, spec)?.loss)
}

/// Loss of one batch and its gradient with respect to every parameter, in
/// the same flat layout as [`EncoderParams::values`]. The dropout masks
/// drawn from `dropout_seed` are shared by the forward and backward pass.
pub fn forward_backward(
    params: &EncoderParams,
    sentences: &[&Sentence],
    spec: &LossSpec,
    dropout_seed: Option<u64>,
) -> Result<(f64, Vec<f64>)> {
    let styles = check_sentences(sentences)?;
    let traces = forward_batch(params, sentences, dropout_seed)?;
    let terms = loss_terms(params, &traces, &styles, spec)?;

    let dims = params.dims;
    let l = dims.layout();
    let (e, h, d) = (dims.embed_dim, dims.hidden_dim, dims.out_dim);
    let vals = &params.values;
    let mut grads = vec![0.0; l.total];

    for (n, (trace, dy)) in traces.iter().zip(&terms.d_output).enumerate() {
        if let Some(dl) = &terms.d_logits {
            let c = dl[n].len();
            for (k, &y) in trace.output.iter().enumerate() {
                for (gw, g) in grads[l.head_w.start + k * c..][..c].iter_mut().zip(&dl[n]) {
                    *gw += y * g;
                }
            }
            for (gb, g) in grads[l.head_b.clone()].iter_mut().zip(&dl[n]) {
                *gb += g;
            }
        }

        // Through y = z/‖z‖.
        let y = &trace.output;
        let y_dy: f64 = y.iter().zip(dy).map(|(a, b)| a * b).sum();
        let dz: Vec<f64> = y.iter().zip(dy).map(|(yi, gi)| (gi - yi * y_dy) / trace.pre_norm).collect();

        for (gb, g) in grads[l.proj_b.clone()].iter_mut().zip(&dz) {
            *gb += g;
        }
        let mut da = vec![0.0; h];
        for (j, &hj) in trace.hidden.iter().enumerate() {
            let row = l.proj_w.start + j * d;
            let mut acc = 0.0;
            for k in 0..d {
                grads[row + k] += hj * dz[k];
                acc += vals[row + k] * dz[k];
            }
            da[j] = acc * (1.0 - hj * hj);
        }

        for (gb, g) in grads[l.hidden_b.clone()].iter_mut().zip(&da) {
            *gb += g;
        }
        let mut dx = vec![0.0; e];
        for (i, &xi) in trace.input.iter().enumerate() {
            let row = l.hidden_w.start + i * h;
            let mut acc = 0.0;
            for j in 0..h {
                grads[row + j] += xi * da[j];
                acc += vals[row + j] * da[j];
            }
            dx[i] = acc;
        }

        if let Some(mask) = &trace.mask {
            for (g, m) in dx.iter_mut().zip(mask) {
                *g *= m;
            }
        }
        let tokens = &sentences[n].tokens;
        let inv = 1.0 / tokens.len() as f64;
        for &t in tokens {
            let row = l.embeddings.start + t as usize * e;
            for (g, v) in grads[row..row + e].iter_mut().zip(&dx) {
                *g += v * inv;
            }
        }
    }
    Ok((terms.loss, grads))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::EncoderDims;
    use crate::numeric::{adam_step, finite_diff_grad, relative_error, AdamState};
    use rand::Rng;

    fn random_batch(rng: &mut impl Rng, vocab: usize, b: usize) -> Vec<Sentence> {
        (0..b)
            .map(|i| {
                let len = rng.random_range(1..5);
                Sentence {
                    id: i,
                    tokens: (0..len).map(|_| rng.random_range(0..vocab as u32)).collect(),
                    raw_text: String::new(),
                    style: i % 2,
                }
            })
            .collect()
    }

    fn check_mode(mode: LossMode, trials: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(mode as u64 + 100);
        let mut worst: f64 = 0.0;
        for trial in 0..trials {
            let dims = EncoderDims {
                vocab_size: rng.random_range(3..9),
                embed_dim: rng.random_range(2..9),
                hidden_dim: rng.random_range(2..9),
                out_dim: rng.random_range(2..9),
                num_classes: Some(2),
            };
            let params = EncoderParams::init(dims, 0.1, trial).unwrap();
            let b = 2 * rng.random_range(2..5);
            let batch = random_batch(&mut rng, dims.vocab_size, b);
            let refs: Vec<&Sentence> = batch.iter().collect();
            let spec = LossSpec::new(mode);
            let seed = Some(trial * 7 + 1);
            let (_, analytic) = forward_backward(&params, &refs, &spec, seed).unwrap();
            let numeric = finite_diff_grad(
                |v| {
                    let p = EncoderParams::from_values(dims, 0.1, v.to_vec())?;
                    batch_loss(&p, &refs, &spec, seed)
                },
                params.values(),
                1e-5,
            )
            .unwrap();
            worst = worst.max(relative_error(&analytic, &numeric));
        }
        assert!(worst <= 1e-4, "{mode}: worst relative error {worst}");
    }

    #[test]
    fn gradients_match_finite_differences_cl() {
        check_mode(LossMode::Cl, 20);
    }

    #[test]
    fn gradients_match_finite_differences_cel() {
        check_mode(LossMode::Cel, 20);
    }

    #[test]
    fn gradients_match_finite_differences_cel_cl() {
        check_mode(LossMode::CelCl, 20);
    }

    #[test]
    fn identical_sentences_give_uniform_loss() {
        let dims = EncoderDims { vocab_size: 4, embed_dim: 4, hidden_dim: 4, out_dim: 4, num_classes: None };
        let params = EncoderParams::init(dims, 0.0, 5).unwrap();
        let batch: Vec<Sentence> =
            (0..4).map(|i| Sentence { id: i, tokens: vec![2, 3], raw_text: String::new(), style: i % 2 }).collect();
        let refs: Vec<&Sentence> = batch.iter().collect();
        let (loss, grads) = forward_backward(&params, &refs, &LossSpec::new(LossMode::Cl), None).unwrap();
        assert!((loss - 3f64.ln()).abs() < 1e-12);
        assert!(grads.iter().all(|g| g.is_finite()));
    }

    #[test]
    fn zero_learning_rate_step_keeps_params() {
        let dims = EncoderDims { vocab_size: 5, embed_dim: 4, hidden_dim: 4, out_dim: 4, num_classes: Some(2) };
        let params = EncoderParams::init(dims, 0.1, 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let batch = random_batch(&mut rng, 5, 4);
        let refs: Vec<&Sentence> = batch.iter().collect();
        let (_, grads) = forward_backward(&params, &refs, &LossSpec::new(LossMode::CelCl), Some(3)).unwrap();
        let (next, _) = adam_step(params.values(), &grads, &AdamState::new(grads.len()), 0.0).unwrap();
        assert_eq!(next, params.values());
    }

    #[test]
    fn cel_without_head_is_rejected() {
        let dims = EncoderDims { vocab_size: 5, embed_dim: 3, hidden_dim: 3, out_dim: 3, num_classes: None };
        let params = EncoderParams::init(dims, 0.0, 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let batch = random_batch(&mut rng, 5, 4);
        let refs: Vec<&Sentence> = batch.iter().collect();
        let err = forward_backward(&params, &refs, &LossSpec::new(LossMode::Cel), None).unwrap_err();
        assert!(matches!(err, crate::Error::Config(_)));
    }
}
