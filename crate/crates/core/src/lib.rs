//! Sentence-level style embeddings learned with a multi-positive contrastive
//! objective and/or cross-entropy, over two-style batches drawn by three
//! sampling strategies, measured with a frozen-embedding logistic probe.
//!
//! Module map:
//!
//! * [`numeric`]: vectors, stable log-softmax, Adam, finite differences.
//! * [`corpus`]: style-labelled corpora, tokenizer, loaders, synthetic generator.
//! * [`encoder`]: embed → mean-pool → tanh → projection → l2 encoder with
//!   analytic gradients and checkpoints.
//! * [`objectives`]: candidate probabilities, contrastive loss, cross-entropy.
//! * [`sampling`]: random, pairwise-novel and per-epoch-unique batch samplers.
//! * [`training`]: learning-rate schedule, training loop, validation.
//! * [`probe`]: multinomial logistic-regression probe.
//! * [`experiment`]: grid runner, reports and self-checks behind the CLI.

pub mod corpus;
pub mod encoder;
mod error;
pub mod experiment;
pub mod numeric;
pub mod objectives;
pub mod probe;
pub mod sampling;
pub mod training;

pub use error::{Error, Result};
