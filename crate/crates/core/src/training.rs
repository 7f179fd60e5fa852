//! Fine-tuning loop: warmup/cooldown schedule, sampler-driven Adam steps,
//! per-epoch dev loss and best-checkpoint selection.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Sentence, Split, StyleCorpus};
use crate::encoder::{batch_loss, encode_all, forward_backward, EncoderParams};
use crate::error::{config, validation, Result};
use crate::numeric::{dot_unchecked, AdamState};
use crate::objectives::{LossMode, LossSpec};
use crate::sampling::{Sampler, SamplerMode};

/// Peak learning rate used for large pretrained backbones. The small
/// reference encoder trains with [`TrainConfig::default`]'s `1e-2`.
pub const FIDELITY_PEAK_LR: f64 = 1e-5;

/// Sentences per style in each deterministic validation batch.
pub const EVAL_HALF_BATCH: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub peak_lr: f64,
    pub max_epochs: usize,
    pub warmup_fraction: f64,
    pub dropout_rate: f64,
    pub loss: LossSpec,
    pub sampler: SamplerMode,
    pub styles_per_batch: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 16,
            peak_lr: 1e-2,
            max_epochs: 10,
            warmup_fraction: 0.1,
            dropout_rate: 0.1,
            loss: LossSpec::new(LossMode::Cl),
            sampler: SamplerMode::RandomReplacement,
            styles_per_batch: 2,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.warmup_fraction > 0.0 && self.warmup_fraction < 1.0) {
            return Err(config(format!("warmup fraction must be in (0, 1), got {}", self.warmup_fraction)));
        }
        if self.max_epochs == 0 {
            return Err(config("max_epochs must be at least 1"));
        }
        if self.batch_size < 4 || !self.batch_size.is_multiple_of(2) {
            return Err(config(format!("batch size must be even and >= 4, got {}", self.batch_size)));
        }
        if !(self.peak_lr >= 0.0 && self.peak_lr.is_finite()) {
            return Err(config(format!("peak learning rate must be >= 0, got {}", self.peak_lr)));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(config(format!("dropout rate must be in [0, 1), got {}", self.dropout_rate)));
        }
        self.loss.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub lr: f64,
    pub train_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub steps: usize,
    pub dev_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub total_steps: usize,
    pub steps: Vec<StepRecord>,
    pub epochs: Vec<EpochRecord>,
    /// 1-based epoch whose checkpoint was kept.
    pub best_epoch: usize,
    pub best_dev_loss: f64,
    /// [`EncoderParams::fingerprint`] of the kept checkpoint.
    pub best_fingerprint: String,
}

impl TrainHistory {
    pub fn steps_csv(&self) -> Result<String> {
        to_csv(&self.steps)
    }

    pub fn epochs_csv(&self) -> Result<String> {
        to_csv(&self.epochs)
    }
}

fn to_csv<T: Serialize>(rows: &[T]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(|e| crate::Error::Io(std::io::Error::other(e)))?;
    }
    let bytes = w.into_inner().map_err(|e| crate::Error::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// Linear warmup from 0 to `peak_lr` over the first `warmup_fraction` of
/// the steps, then linear decay back to 0 at `total_steps`.
pub fn lr_schedule(step: usize, total_steps: usize, peak_lr: f64, warmup_fraction: f64) -> Result<f64> {
    if total_steps == 0 {
        return Err(config("total_steps must be at least 1"));
    }
    if step > total_steps {
        return Err(validation(format!("step {step} beyond total_steps {total_steps}")));
    }
    if !(0.0..1.0).contains(&warmup_fraction) {
        return Err(config(format!("warmup fraction must be in [0, 1), got {warmup_fraction}")));
    }
    let (s, t) = (step as f64, total_steps as f64);
    let warm = warmup_fraction * t;
    if s <= warm {
        return Ok(peak_lr * (s / warm));
    }
    Ok(peak_lr * ((t - s) / (t - warm)))
}

fn steps_per_epoch(sampler: &Sampler, corpus: &StyleCorpus, batch_size: usize) -> usize {
    match sampler.mode() {
        SamplerMode::CorpusNoReplacement => {
            let mut dry = sampler.clone();
            std::iter::from_fn(|| dry.next_batch()).count()
        }
        _ => corpus.split_ids(Split::Train).len().div_ceil(batch_size),
    }
}

/// Fine-tunes `init` and returns the checkpoint with the lowest dev loss.
pub fn train(
    config: &TrainConfig,
    corpus: &StyleCorpus,
    init: &EncoderParams,
) -> Result<(EncoderParams, TrainHistory)> {
    config.validate()?;
    if corpus.split_ids(Split::Train).is_empty() {
        return Err(validation("training split is empty"));
    }
    let mode = config.loss.mode;
    if mode.needs_classifier() && init.dims().num_classes != Some(corpus.num_styles()) {
        return Err(crate::error::config(format!(
            "loss mode {mode} needs a classifier head with {} classes",
            corpus.num_styles()
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut sampler = Sampler::new(config.sampler, corpus, config.batch_size, rng.random(), config.styles_per_batch)?;
    let per_epoch = steps_per_epoch(&sampler, corpus, config.batch_size);
    let total_steps = (per_epoch * config.max_epochs).max(1);

    let mut params = init.clone();
    params.set_dropout_rate(config.dropout_rate)?;
    let mut adam = AdamState::new(params.num_params());
    let mut history = TrainHistory {
        total_steps,
        steps: Vec::new(),
        epochs: Vec::new(),
        best_epoch: 0,
        best_dev_loss: f64::INFINITY,
        best_fingerprint: String::new(),
    };
    let mut best = params.clone();
    let mut step = 0;

    for epoch in 1..=config.max_epochs {
        let limit = match config.sampler {
            SamplerMode::CorpusNoReplacement => usize::MAX,
            _ => per_epoch,
        };
        let mut taken = 0;
        while taken < limit {
            let Some(batch) = sampler.next_batch() else { break };
            let sentences: Vec<&Sentence> = batch.sentence_ids.iter().map(|&id| corpus.sentence(id)).collect();
            let (loss, grads) = forward_backward(&params, &sentences, &config.loss, Some(rng.random()))?;
            step += 1;
            taken += 1;
            let lr = lr_schedule(step.min(total_steps), total_steps, config.peak_lr, config.warmup_fraction)?;
            adam.update(params.values_mut(), &grads, lr)?;
            history.steps.push(StepRecord { step, lr, train_loss: loss });
        }
        if taken == 0 {
            break;
        }
        let dev_loss = validate(&params, corpus, Split::Dev, &config.loss)?;
        history.epochs.push(EpochRecord { epoch, steps: taken, dev_loss });
        if dev_loss < history.best_dev_loss {
            history.best_dev_loss = dev_loss;
            history.best_epoch = epoch;
            best = params.clone();
        }
        sampler.epoch_reset();
    }
    if history.epochs.is_empty() {
        return Err(validation("the sampler produced no training batch"));
    }
    history.best_fingerprint = best.fingerprint();
    Ok((best, history))
}

/// Splits sorted ids into `max(1, n / EVAL_HALF_BATCH)` contiguous chunks
/// whose sizes differ by at most one.
fn chunks(ids: &[usize]) -> Vec<&[usize]> {
    let n = ids.len();
    let k = (n / EVAL_HALF_BATCH).max(1);
    let mut out = Vec::with_capacity(k);
    let mut at = 0;
    for i in 0..k {
        let len = n / k + usize::from(i < n % k);
        out.push(&ids[at..at + len]);
        at += len;
    }
    out
}

/// Mean eval-mode loss over deterministic batches covering the split:
/// for every style pair, chunk `i` of one style is paired with chunk `i`
/// of the other (the shorter chunk list wraps around).
pub fn validate(params: &EncoderParams, corpus: &StyleCorpus, split: Split, loss: &LossSpec) -> Result<f64> {
    let by_style = corpus.ids_by_style(split);
    let usable: Vec<&Vec<usize>> = by_style.iter().filter(|ids| ids.len() >= 2).collect();
    if usable.len() < 2 {
        return Err(validation(format!("{split} split needs two styles with at least two sentences")));
    }
    let mut total = 0.0;
    let mut count = 0usize;
    for a in 0..usable.len() {
        for b in a + 1..usable.len() {
            let (ca, cb) = (chunks(usable[a]), chunks(usable[b]));
            for i in 0..ca.len().max(cb.len()) {
                let sentences: Vec<&Sentence> =
                    ca[i % ca.len()].iter().chain(cb[i % cb.len()]).map(|&id| corpus.sentence(id)).collect();
                total += batch_loss(params, &sentences, loss, None)?;
                count += 1;
            }
        }
    }
    Ok(total / count as f64)
}

/// Mean same-style cosine minus mean cross-style cosine over all unordered
/// pairs of unit-norm embeddings.
pub fn cosine_gap<E: AsRef<[f64]>>(embeddings: &[E], styles: &[usize]) -> Result<f64> {
    if embeddings.len() != styles.len() {
        return Err(crate::error::shape("embeddings and styles differ in length"));
    }
    let (mut same, mut n_same, mut cross, mut n_cross) = (0.0, 0usize, 0.0, 0usize);
    for i in 0..embeddings.len() {
        for j in i + 1..embeddings.len() {
            let c = dot_unchecked(embeddings[i].as_ref(), embeddings[j].as_ref());
            if styles[i] == styles[j] {
                same += c;
                n_same += 1;
            } else {
                cross += c;
                n_cross += 1;
            }
        }
    }
    if n_same == 0 || n_cross == 0 {
        return Err(validation("cosine gap needs both same-style and cross-style pairs"));
    }
    Ok(same / n_same as f64 - cross / n_cross as f64)
}

/// [`cosine_gap`] of the eval-mode embeddings of one split.
pub fn split_cosine_gap(params: &EncoderParams, corpus: &StyleCorpus, split: Split) -> Result<f64> {
    let ids = corpus.split_ids(split);
    let emb = encode_all(params, ids.iter().map(|&id| corpus.sentence(id)))?;
    let styles: Vec<usize> = ids.iter().map(|&id| corpus.sentence(id).style).collect();
    cosine_gap(&emb, &styles)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{generate_synthetic, parse_corpus, CorpusFormat, SynthConfig};
    use crate::encoder::EncoderDims;
    use proptest::prelude::*;

    fn small_corpus() -> StyleCorpus {
        generate_synthetic(&SynthConfig {
            n_base_sentences: 120,
            styles_requested: vec!["to_future_tense".into()],
            sentences_per_style: 60,
            seed: 4,
        })
        .unwrap()
    }

    fn small_init(corpus: &StyleCorpus, head: bool) -> EncoderParams {
        let dims = EncoderDims {
            vocab_size: corpus.vocab().len(),
            embed_dim: 8,
            hidden_dim: 8,
            out_dim: 8,
            num_classes: head.then_some(corpus.num_styles()),
        };
        EncoderParams::init(dims, 0.1, 1).unwrap()
    }

    #[test]
    fn schedule_reference_points() {
        let p = 3e-4;
        assert_eq!(lr_schedule(0, 100, p, 0.1).unwrap(), 0.0);
        assert_eq!(lr_schedule(5, 100, p, 0.1).unwrap(), 0.5 * p);
        assert_eq!(lr_schedule(10, 100, p, 0.1).unwrap(), p);
        assert_eq!(lr_schedule(55, 100, p, 0.1).unwrap(), 0.5 * p);
        assert_eq!(lr_schedule(100, 100, p, 0.1).unwrap(), 0.0);
        assert!(matches!(lr_schedule(101, 100, p, 0.1), Err(crate::Error::Validation(_))));
        assert!(lr_schedule(0, 0, p, 0.1).is_err());
    }

    proptest! {
        #[test]
        fn schedule_is_bounded_and_unimodal(total in 1usize..400, w in 0.01f64..0.99, peak in 1e-6f64..1.0) {
            let lrs: Vec<f64> = (0..=total).map(|s| lr_schedule(s, total, peak, w).unwrap()).collect();
            prop_assert_eq!(lrs[0], 0.0);
            prop_assert_eq!(lrs[total], 0.0);
            let top = lrs.iter().cloned().fold(0.0, f64::max);
            prop_assert!(top <= peak * (1.0 + 1e-12));
            let arg = lrs.iter().position(|&v| v == top).unwrap();
            prop_assert!(lrs[..=arg].windows(2).all(|x| x[0] <= x[1]));
            prop_assert!(lrs[arg..].windows(2).all(|x| x[0] >= x[1]));
            // Neighbouring steps never jump by more than one slope's worth.
            let slope = peak / (w * total as f64).min((1.0 - w) * total as f64).max(1e-300);
            prop_assert!(lrs.windows(2).all(|x| (x[1] - x[0]).abs() <= slope * (1.0 + 1e-9)));
        }
    }

    #[test]
    fn zero_learning_rate_returns_init() {
        let corpus = small_corpus();
        let init = small_init(&corpus, false);
        let cfg = TrainConfig { max_epochs: 1, peak_lr: 0.0, dropout_rate: init.dropout_rate(), ..Default::default() };
        let (best, history) = train(&cfg, &corpus, &init).unwrap();
        assert_eq!(best, init);
        assert_eq!(history.best_epoch, 1);
        assert_eq!(history.best_fingerprint, init.fingerprint());
    }

    #[test]
    fn training_is_deterministic_and_keeps_the_best_epoch() {
        let corpus = small_corpus();
        for (mode, head) in [(LossMode::Cl, false), (LossMode::CelCl, true), (LossMode::Cel, true)] {
            for sampler in SamplerMode::ALL {
                let init = small_init(&corpus, head);
                let cfg = TrainConfig {
                    max_epochs: 3,
                    batch_size: 8,
                    loss: LossSpec::new(mode),
                    sampler,
                    seed: 7,
                    ..Default::default()
                };
                let (a, ha) = train(&cfg, &corpus, &init).unwrap();
                let (b, hb) = train(&cfg, &corpus, &init).unwrap();
                assert_eq!(a, b);
                assert_eq!(ha, hb);
                let min = ha.epochs.iter().map(|e| e.dev_loss).fold(f64::INFINITY, f64::min);
                assert_eq!(ha.best_dev_loss, min);
                let first = ha.epochs.iter().find(|e| e.dev_loss == min).unwrap().epoch;
                assert_eq!(ha.best_epoch, first);
                assert_eq!(a.fingerprint(), ha.best_fingerprint);
                assert_eq!(validate(&a, &corpus, Split::Dev, &cfg.loss).unwrap(), min);
                if sampler == SamplerMode::CorpusNoReplacement {
                    for e in &ha.epochs {
                        assert!(e.steps * cfg.batch_size <= corpus.split_ids(Split::Train).len());
                    }
                }
            }
        }
    }

    #[test]
    fn validation_loss_on_constant_embeddings_is_uniform() {
        let mut text = String::new();
        for style in ["a", "b"] {
            for split in ["train", "train", "dev", "dev", "test", "test"] {
                text.push_str(&format!("{{\"text\":\"same words\",\"style\":\"{style}\",\"split\":\"{split}\"}}\n"));
            }
        }
        let corpus = parse_corpus(&text, CorpusFormat::Jsonl).unwrap();
        let init = small_init(&corpus, false);
        let spec = LossSpec::new(LossMode::Cl);
        let v1 = validate(&init, &corpus, Split::Dev, &spec).unwrap();
        let v2 = validate(&init, &corpus, Split::Dev, &spec).unwrap();
        assert_eq!(v1, v2);
        assert!((v1 - 3f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn chunks_cover_ids_evenly() {
        let ids: Vec<usize> = (0..37).collect();
        let c = chunks(&ids);
        assert_eq!(c.len(), 4);
        assert_eq!(c.concat(), ids);
        assert!(c.iter().all(|x| x.len() == 9 || x.len() == 10));
        assert_eq!(chunks(&ids[..3]).len(), 1);
    }

    #[test]
    fn cosine_gap_reference() {
        let e = [[1.0, 0.0], [1.0, 0.0], [0.0, 1.0], [0.0, 1.0]];
        assert_eq!(cosine_gap(&e, &[0, 0, 1, 1]).unwrap(), 1.0);
        assert!(cosine_gap(&e, &[0, 1, 2, 3]).is_err());
    }

    #[test]
    fn config_errors() {
        let corpus = small_corpus();
        let init = small_init(&corpus, false);
        for cfg in [
            TrainConfig { warmup_fraction: 0.0, ..Default::default() },
            TrainConfig { max_epochs: 0, ..Default::default() },
            TrainConfig { batch_size: 6 + 1, ..Default::default() },
            TrainConfig { loss: LossSpec::new(LossMode::Cel), ..Default::default() },
        ] {
            assert!(matches!(train(&cfg, &corpus, &init), Err(crate::Error::Config(_))), "{cfg:?}");
        }
    }

    #[test]
    fn history_csv_has_headers() {
        let corpus = small_corpus();
        let init = small_init(&corpus, false);
        let cfg = TrainConfig { max_epochs: 1, ..Default::default() };
        let (_, h) = train(&cfg, &corpus, &init).unwrap();
        assert!(h.steps_csv().unwrap().starts_with("step,lr,train_loss\n"));
        assert!(h.epochs_csv().unwrap().starts_with("epoch,steps,dev_loss\n"));
    }
}
