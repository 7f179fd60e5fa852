//! Grid runner: fine-tune one encoder per (loss, sampler) cell, probe each
//! on every dataset, and write records, artifacts and the results table.
//!
//! Layout under `output_dir`:
//!
//! ```text
//! results.json          one ResultsRecord per (cell, dataset)
//! timings.json          wall-clock seconds per cell
//! report.md, report.csv
//! cells/<cell>/checkpoint.json, history.json, steps.csv, epochs.csv,
//!              probe-<dataset>.json
//! ```
//!
//! Wall-clock times live in `timings.json` so that `results.json` is
//! byte-identical across runs with the same seed.

mod config;
mod report;
pub mod selfcheck;

use std::fs;
use std::path::Path;
use std::time::Instant;

use serde::Serialize;

pub use config::{Cell, DatasetConfig, EncoderSettings, ExperimentConfig, GridConfig, GridLoss, TrainSettings};
pub use report::{parse_table_csv, render_table, table_rows, CellStatus, ResultsRecord, TableFormat, COLUMNS, MISSING};

use crate::corpus::StyleCorpus;
use crate::encoder::{save_checkpoint, Checkpoint, EncoderParams};
use crate::error::{config as config_err, Result};
use crate::probe::{probe_encoder, ProbeConfig, ProbeResult};
use crate::training::{train, TrainHistory};

/// Writes `value` as pretty JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

/// The shared starting point of every cell: seeded weights with a
/// classifier head over the corpus styles.
pub fn initial_encoder(cfg: &ExperimentConfig, corpus: &StyleCorpus) -> Result<EncoderParams> {
    let dims = cfg.encoder.dims(corpus.vocab().len(), Some(corpus.num_styles()));
    EncoderParams::init(dims, cfg.train.dropout_rate, cfg.seed)
}

fn style_names(corpus: &StyleCorpus) -> Vec<String> {
    corpus.styles().iter().map(|s| s.name.clone()).collect()
}

/// Fine-tunes one cell (PT returns `init` untouched) and writes its
/// checkpoint and history into `dir`.
pub fn train_cell(
    cfg: &ExperimentConfig,
    cell: Cell,
    corpus: &StyleCorpus,
    init: &EncoderParams,
    dir: &Path,
) -> Result<(EncoderParams, Option<TrainHistory>)> {
    fs::create_dir_all(dir)?;
    let (params, history) = match (cell.loss.loss_mode(), cell.sampler) {
        (None, _) => (init.clone(), None),
        (Some(mode), Some(sampler)) => {
            let tc = cfg.train.train_config(mode, sampler, cfg.seed);
            let (p, h) = train(&tc, corpus, init)?;
            (p, Some(h))
        }
        (Some(_), None) => return Err(config_err(format!("cell {} has no sampler", cell.dir_name()))),
    };
    let ck = Checkpoint::from_params(&params, Some(corpus.vocab()), &style_names(corpus));
    save_checkpoint(&dir.join("checkpoint.json"), &ck)?;
    if let Some(h) = &history {
        write_json(&dir.join("history.json"), h)?;
        fs::write(dir.join("steps.csv"), h.steps_csv()?)?;
        fs::write(dir.join("epochs.csv"), h.epochs_csv()?)?;
    }
    Ok((params, history))
}

fn file_safe(name: &str) -> String {
    name.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' }).collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct CellTiming {
    pub cell: String,
    pub seconds: f64,
}

/// Everything a run produced.
#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub records: Vec<ResultsRecord>,
    pub timings: Vec<CellTiming>,
}

/// Loads the fine-tuning corpus and the probe-only datasets (the latter
/// re-tokenized with the fine-tuning vocabulary).
pub fn load_datasets(cfg: &ExperimentConfig) -> Result<Vec<(String, StyleCorpus)>> {
    let main = cfg.corpus.load(&cfg.base_dir)?;
    let mut out = vec![(cfg.corpus.display_name(), main)];
    for d in &cfg.eval {
        let name = d.display_name();
        if out.iter().any(|(n, _)| *n == name) {
            return Err(config_err(format!("dataset name {name:?} used twice")));
        }
        let c = d.load(&cfg.base_dir)?.retokenize(out[0].1.vocab())?;
        out.push((name, c));
    }
    Ok(out)
}

/// Runs the whole grid and writes every artifact under `cfg.output_dir`.
/// A failing cell yields failure records; the remaining cells still run.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutcome> {
    cfg.validate()?;
    let datasets = load_datasets(cfg)?;
    let corpus = &datasets[0].1;
    let init = initial_encoder(cfg, corpus)?;
    let out = &cfg.output_dir;
    fs::create_dir_all(out.join("cells"))?;

    let mut records = Vec::new();
    let mut timings = Vec::new();
    for cell in cfg.cells() {
        let start = Instant::now();
        let dir = out.join("cells").join(cell.dir_name());
        let base = |dataset: &str| ResultsRecord {
            dataset: dataset.to_string(),
            loss_mode: cell.loss,
            sampler_mode: cell.sampler,
            status: CellStatus::Failed,
            accuracy: None,
            best_dev_loss: None,
            best_epoch: None,
            encoder_id: None,
            seed: cfg.seed,
            error: None,
        };
        match train_cell(cfg, cell, corpus, &init, &dir) {
            Err(e) => {
                for (name, _) in &datasets {
                    records.push(ResultsRecord { error: Some(e.to_string()), ..base(name) });
                }
            }
            Ok((params, history)) => {
                for (name, data) in &datasets {
                    let mut rec = ResultsRecord {
                        best_dev_loss: history.as_ref().map(|h| h.best_dev_loss),
                        best_epoch: history.as_ref().map(|h| h.best_epoch),
                        encoder_id: Some(params.fingerprint()),
                        ..base(name)
                    };
                    match probe_and_save(&params, data, name, &cfg.probe, &dir) {
                        Ok(r) => {
                            rec.status = CellStatus::Ok;
                            rec.accuracy = Some(r.accuracy);
                        }
                        Err(e) => rec.error = Some(e.to_string()),
                    }
                    records.push(rec);
                }
            }
        }
        timings.push(CellTiming { cell: cell.dir_name(), seconds: start.elapsed().as_secs_f64() });
    }

    write_json(&out.join("results.json"), &records)?;
    write_json(&out.join("timings.json"), &timings)?;
    fs::write(out.join("report.md"), render_table(&records, TableFormat::Markdown))?;
    fs::write(out.join("report.csv"), render_table(&records, TableFormat::Csv))?;
    Ok(ExperimentOutcome { records, timings })
}

fn probe_and_save(
    params: &EncoderParams,
    data: &StyleCorpus,
    name: &str,
    cfg: &ProbeConfig,
    dir: &Path,
) -> Result<ProbeResult> {
    let (_, result) = probe_encoder(params, data, name, cfg)?;
    write_json(&dir.join(format!("probe-{}.json", file_safe(name))), &result)?;
    Ok(result)
}

/// Reads `results.json` back.
pub fn load_results(path: &Path) -> Result<Vec<ResultsRecord>> {
    Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_config(out: &Path) -> ExperimentConfig {
        let text = format!(
            "output_dir = {:?}\nseed = 3\n\
             [corpus]\nname = \"tiny\"\n[corpus.synthetic]\nn_base_sentences = 60\n\
             styles_requested = [\"formal_marker\"]\nsentences_per_style = 40\nseed = 2\n\
             [encoder]\nembed_dim = 8\nhidden_dim = 8\nout_dim = 8\n\
             [train]\nbatch_size = 8\nmax_epochs = 2\n",
            out.display().to_string()
        );
        ExperimentConfig::from_toml(&text).unwrap()
    }

    #[test]
    fn full_grid_writes_every_artifact() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny_config(dir.path());
        let outcome = run_experiment(&cfg).unwrap();
        assert_eq!(outcome.records.len(), 8);
        assert!(outcome.records.iter().all(|r| r.status == CellStatus::Ok));
        for f in ["results.json", "timings.json", "report.md", "report.csv"] {
            assert!(dir.path().join(f).is_file(), "{f}");
        }
        let pt = dir.path().join("cells/pt");
        assert!(pt.join("checkpoint.json").is_file());
        assert!(!pt.join("history.json").exists());
        assert!(dir.path().join("cells/cl-corpus/epochs.csv").is_file());
        assert!(dir.path().join("cells/cl-corpus/probe-tiny.json").is_file());
        assert_eq!(load_results(&dir.path().join("results.json")).unwrap(), outcome.records);
        // PT keeps the initial encoder.
        assert_eq!(outcome.records[0].best_epoch, None);
    }

    #[test]
    fn failing_cell_is_recorded_and_others_continue() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = tiny_config(dir.path());
        // Too few training sentences per style for this batch size: every
        // training cell fails, PT still probes.
        cfg.train.batch_size = 80;
        let outcome = run_experiment(&cfg).unwrap();
        assert_eq!(outcome.records.len(), 8);
        assert_eq!(outcome.records[0].status, CellStatus::Ok);
        for r in &outcome.records[1..] {
            assert_eq!(r.status, CellStatus::Failed);
            assert!(r.error.as_deref().unwrap().contains("training sentences"));
        }
        let md = fs::read_to_string(dir.path().join("report.md")).unwrap();
        assert!(md.lines().last().unwrap().matches(MISSING).count() == 7);
    }
}
