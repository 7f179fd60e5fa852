use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use stylecl::corpus::{generate_synthetic, load_corpus, CorpusFormat, SynthConfig};
use stylecl::encoder::load_checkpoint;
use stylecl::experiment::{
    self, initial_encoder, load_results, render_table, selfcheck, write_json, Cell, ExperimentConfig, GridLoss,
    TableFormat,
};
use stylecl::probe::{probe_encoder, ProbeConfig};
use stylecl::sampling::SamplerMode;

#[derive(Parser)]
#[command(name = "stylecl", version, about = "Contrastive style-embedding experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config (TOML).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, env = "STYLECL_SEED")]
    seed: Option<u64>,
    /// Overrides the output directory.
    #[arg(long, env = "STYLECL_OUT")]
    out: Option<PathBuf>,
}

impl Common {
    fn experiment(&self) -> Result<ExperimentConfig> {
        let path = self.config.as_deref().context("--config is required")?;
        let mut cfg = ExperimentConfig::load(path).with_context(|| format!("loading {}", path.display()))?;
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(out) = &self.out {
            cfg.output_dir = out.clone();
        }
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic corpus as JSONL.
    Generate {
        #[command(flatten)]
        common: Common,
        /// Comma-separated transforms (or `+` compositions).
        #[arg(long, value_delimiter = ',')]
        styles: Option<Vec<String>>,
        #[arg(long)]
        per_style: Option<usize>,
        #[arg(long)]
        base_sentences: Option<usize>,
    },
    /// Fine-tune one grid cell.
    Train {
        #[command(flatten)]
        common: Common,
        /// PT, CEL, CEL+CL or CL.
        #[arg(long, default_value = "CL")]
        loss: String,
        #[arg(long, default_value = "random")]
        sampler: String,
    },
    /// Probe a saved encoder on a corpus.
    Probe {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Corpus file; defaults to the config's fine-tuning corpus.
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long)]
        corpus_format: Option<String>,
        #[arg(long)]
        dataset: Option<String>,
    },
    /// Run the full grid from a config.
    Run {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "markdown")]
        format: String,
    },
    /// Render results.json as a table.
    Report {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "markdown")]
        format: String,
    },
    /// Run the gradient, loss, sampler, schedule and probe self-checks.
    Check {
        #[arg(long, env = "STYLECL_SEED", default_value_t = 0)]
        seed: u64,
    },
}

fn out_dir(common: &Common, fallback: &Path) -> PathBuf {
    common.out.clone().unwrap_or_else(|| fallback.to_path_buf())
}

fn generate(common: &Common, styles: Option<Vec<String>>, per_style: Option<usize>, base: Option<usize>) -> Result<()> {
    let (mut synth, name) = match &common.config {
        Some(_) => {
            let cfg = common.experiment()?;
            let s = cfg.corpus.synthetic.clone().context("config corpus is not synthetic")?;
            (s, cfg.corpus.display_name())
        }
        None => (SynthConfig::default(), "synthetic".to_string()),
    };
    if let Some(s) = styles {
        synth.styles_requested = s;
    }
    if let Some(n) = per_style {
        synth.sentences_per_style = n;
    }
    if let Some(n) = base {
        synth.n_base_sentences = n;
    }
    if let Some(seed) = common.seed {
        synth.seed = seed;
    }
    let corpus = generate_synthetic(&synth)?;
    let dir = out_dir(common, Path::new("."));
    fs::create_dir_all(&dir)?;
    let path = dir.join(format!("{name}.jsonl"));
    corpus.save_jsonl(&path)?;
    println!("wrote {} sentences in {} styles to {}", corpus.sentences().len(), corpus.num_styles(), path.display());
    Ok(())
}

fn train(common: &Common, loss: &str, sampler: &str) -> Result<()> {
    let cfg = common.experiment()?;
    let loss: GridLoss = loss.parse()?;
    let sampler: SamplerMode = sampler.parse()?;
    let cell = Cell { loss, sampler: (loss != GridLoss::Pt).then_some(sampler) };
    let datasets = experiment::load_datasets(&cfg)?;
    let corpus = &datasets[0].1;
    let init = initial_encoder(&cfg, corpus)?;
    let dir = cfg.output_dir.join(cell.dir_name());
    let (params, history) = experiment::train_cell(&cfg, cell, corpus, &init, &dir)?;
    match history {
        Some(h) => println!(
            "{}: {} steps, best epoch {} (dev loss {:.6}), encoder {}",
            cell.dir_name(),
            h.steps.len(),
            h.best_epoch,
            h.best_dev_loss,
            params.fingerprint()
        ),
        None => println!("{}: no training, encoder {}", cell.dir_name(), params.fingerprint()),
    }
    println!("artifacts in {}", dir.display());
    Ok(())
}

fn probe(
    common: &Common,
    checkpoint: &Path,
    corpus: Option<&Path>,
    format: Option<&str>,
    dataset: Option<&str>,
) -> Result<()> {
    let ck = load_checkpoint(checkpoint).with_context(|| format!("loading {}", checkpoint.display()))?;
    let params = ck.to_params(None)?;
    let vocab = ck.vocab.clone().context("checkpoint carries no vocabulary")?;
    let cfg = common.config.as_ref().map(|_| common.experiment()).transpose()?;
    let probe_cfg = cfg.as_ref().map(|c| c.probe.clone()).unwrap_or_else(ProbeConfig::default);
    let (data, name) = match corpus {
        Some(path) => {
            let format = match format {
                Some(f) => f.parse()?,
                None => CorpusFormat::from_path(path).context("cannot infer corpus format; pass --corpus-format")?,
            };
            let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            (load_corpus(path, format)?, stem)
        }
        None => {
            let cfg = cfg.as_ref().context("pass --corpus or --config")?;
            (cfg.corpus.load(&cfg.base_dir)?, cfg.corpus.display_name())
        }
    };
    let name = dataset.map(str::to_string).unwrap_or(name);
    let data = data.retokenize(&vocab)?;
    let (_, result) = probe_encoder(&params, &data, &name, &probe_cfg)?;
    let dir = out_dir(common, checkpoint.parent().unwrap_or(Path::new(".")));
    fs::create_dir_all(&dir)?;
    let path = dir.join("probe.json");
    write_json(&path, &result)?;
    println!(
        "{name}: test accuracy {:.4} ({} train, {} test), written to {}",
        result.accuracy,
        result.n_train,
        result.n_test,
        path.display()
    );
    Ok(())
}

fn run(common: &Common, format: &str) -> Result<()> {
    let format: TableFormat = format.parse()?;
    let cfg = common.experiment()?;
    let outcome = experiment::run_experiment(&cfg)?;
    let failed = outcome.records.iter().filter(|r| r.status == experiment::CellStatus::Failed).count();
    print!("{}", render_table(&outcome.records, format));
    eprintln!("{} records ({failed} failed) in {}", outcome.records.len(), cfg.output_dir.display());
    Ok(())
}

fn report(common: &Common, format: &str) -> Result<()> {
    let format: TableFormat = format.parse()?;
    let dir = match (&common.out, &common.config) {
        (Some(d), _) => d.clone(),
        (None, Some(_)) => common.experiment()?.output_dir,
        (None, None) => bail!("pass --out <dir> or --config"),
    };
    let records = load_results(&dir.join("results.json"))?;
    print!("{}", render_table(&records, format));
    Ok(())
}

fn check(seed: u64) -> bool {
    let mut ok = true;
    for c in selfcheck::run_all(seed) {
        println!("[{}] {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
        ok &= c.passed;
    }
    ok
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Generate { common, styles, per_style, base_sentences } => {
            generate(common, styles.clone(), *per_style, *base_sentences)
        }
        Command::Train { common, loss, sampler } => train(common, loss, sampler),
        Command::Probe { common, checkpoint, corpus, corpus_format, dataset } => {
            probe(common, checkpoint, corpus.as_deref(), corpus_format.as_deref(), dataset.as_deref())
        }
        Command::Run { common, format } => run(common, format),
        Command::Report { common, format } => report(common, format),
        Command::Check { seed } => {
            return if check(*seed) { ExitCode::SUCCESS } else { ExitCode::FAILURE };
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
