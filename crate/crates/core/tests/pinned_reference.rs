//! Measured values from one reference run, frozen. A change here means the
//! numerics moved; re-derive deliberately rather than loosening tolerances.

use stylecl::corpus::{generate_synthetic, Split, SynthConfig};
use stylecl::encoder::{EncoderDims, EncoderParams};
use stylecl::experiment::{run_experiment, ExperimentConfig, GridConfig, GridLoss};
use stylecl::objectives::{LossMode, LossSpec};
use stylecl::sampling::SamplerMode;
use stylecl::training::{split_cosine_gap, train, TrainConfig};

const INIT_GAP: f64 = 7.72087483962168308e-2;
const TRAINED_GAP: f64 = 1.99749648718910455;
const GRID_ACCURACY: f64 = 1.0;

#[test]
fn two_style_cl_gap_is_reproduced() {
    let corpus = generate_synthetic(&SynthConfig::default()).unwrap();
    let dims = EncoderDims::new(corpus.vocab().len(), None);
    let init = EncoderParams::init(dims, TrainConfig::default().dropout_rate, 0).unwrap();
    let cfg = TrainConfig { loss: LossSpec::new(LossMode::Cl), seed: 0, ..Default::default() };
    let (best, _) = train(&cfg, &corpus, &init).unwrap();
    let before = split_cosine_gap(&init, &corpus, Split::Dev).unwrap();
    let after = split_cosine_gap(&best, &corpus, Split::Dev).unwrap();
    println!("init gap {before:.17e}, trained gap {after:.17e}");
    assert!((before - INIT_GAP).abs() < 1e-9, "{before}");
    assert!((after - TRAINED_GAP).abs() < 1e-9, "{after}");
    assert!(after >= 0.5 && after > before);
}

#[test]
fn cl_random_grid_accuracy_is_reproduced() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = ExperimentConfig::from_toml("[corpus]\nname = \"synthetic\"\n[corpus.synthetic]\n").unwrap();
    cfg.output_dir = dir.path().to_path_buf();
    cfg.grid = GridConfig { loss_modes: vec![GridLoss::Cl], samplers: vec![SamplerMode::RandomReplacement] };
    let outcome = run_experiment(&cfg).unwrap();
    assert_eq!(outcome.records.len(), 1);
    let acc = outcome.records[0].accuracy.unwrap();
    println!("grid accuracy {acc:.17e}");
    assert_eq!(acc, GRID_ACCURACY);
    assert!(acc >= 0.95);
}
