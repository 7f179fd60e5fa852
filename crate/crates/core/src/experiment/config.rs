//! TOML experiment configuration.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::{generate_synthetic, load_corpus, CorpusFormat, StyleCorpus, SynthConfig};
use crate::encoder::EncoderDims;
use crate::error::{config, Error, Result};
use crate::objectives::{LossMode, LossSpec};
use crate::probe::ProbeConfig;
use crate::sampling::SamplerMode;
use crate::training::TrainConfig;

/// One column family of the results table. `Pt` probes the initialized
/// encoder without fine-tuning.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum GridLoss {
    #[serde(rename = "PT")]
    Pt,
    #[serde(rename = "CEL")]
    Cel,
    #[serde(rename = "CEL+CL")]
    CelCl,
    #[serde(rename = "CL")]
    Cl,
}

impl GridLoss {
    pub const ALL: [GridLoss; 4] = [GridLoss::Pt, GridLoss::Cel, GridLoss::CelCl, GridLoss::Cl];

    pub fn as_str(self) -> &'static str {
        match self {
            GridLoss::Pt => "PT",
            GridLoss::Cel => "CEL",
            GridLoss::CelCl => "CEL+CL",
            GridLoss::Cl => "CL",
        }
    }

    pub fn loss_mode(self) -> Option<LossMode> {
        match self {
            GridLoss::Pt => None,
            GridLoss::Cel => Some(LossMode::Cel),
            GridLoss::CelCl => Some(LossMode::CelCl),
            GridLoss::Cl => Some(LossMode::Cl),
        }
    }
}

impl fmt::Display for GridLoss {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for GridLoss {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "PT" | "pt" => Ok(GridLoss::Pt),
            other => Ok(other.parse::<LossMode>().map(|m| match m {
                LossMode::Cl => GridLoss::Cl,
                LossMode::Cel => GridLoss::Cel,
                LossMode::CelCl => GridLoss::CelCl,
            })?),
        }
    }
}

/// Where a corpus comes from: a file, or the synthetic generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    /// Name used in reports; defaults to the file stem or `synthetic`.
    pub name: Option<String>,
    pub path: Option<PathBuf>,
    pub format: Option<CorpusFormat>,
    pub synthetic: Option<SynthConfig>,
}

impl DatasetConfig {
    pub fn synthetic(cfg: SynthConfig) -> Self {
        Self { name: None, path: None, format: None, synthetic: Some(cfg) }
    }

    pub fn display_name(&self) -> String {
        if let Some(n) = &self.name {
            return n.clone();
        }
        match &self.path {
            Some(p) => p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "corpus".into()),
            None => "synthetic".into(),
        }
    }

    fn validate(&self) -> Result<()> {
        match (&self.path, &self.synthetic) {
            (Some(_), None) | (None, Some(_)) => Ok(()),
            _ => Err(config(format!("dataset {:?} needs exactly one of `path` or `synthetic`", self.display_name()))),
        }
    }

    /// Loads or generates the corpus. Relative paths resolve against `base`.
    pub fn load(&self, base: &Path) -> Result<StyleCorpus> {
        self.validate()?;
        if let Some(s) = &self.synthetic {
            return generate_synthetic(s);
        }
        let path = base.join(self.path.as_ref().expect("validated"));
        let format = match self.format.or_else(|| CorpusFormat::from_path(&path)) {
            Some(f) => f,
            None => return Err(config(format!("cannot infer corpus format of {}", path.display()))),
        };
        load_corpus(&path, format)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderSettings {
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub out_dim: usize,
}

impl Default for EncoderSettings {
    fn default() -> Self {
        Self {
            embed_dim: EncoderDims::DEFAULT_EMBED,
            hidden_dim: EncoderDims::DEFAULT_HIDDEN,
            out_dim: EncoderDims::DEFAULT_OUT,
        }
    }
}

impl EncoderSettings {
    pub fn dims(&self, vocab_size: usize, num_classes: Option<usize>) -> EncoderDims {
        EncoderDims {
            vocab_size,
            embed_dim: self.embed_dim,
            hidden_dim: self.hidden_dim,
            out_dim: self.out_dim,
            num_classes,
        }
    }
}

/// Training hyperparameters shared by every grid cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSettings {
    pub batch_size: usize,
    pub peak_lr: f64,
    pub max_epochs: usize,
    pub warmup_fraction: f64,
    pub dropout_rate: f64,
    pub styles_per_batch: usize,
    pub weight_cl: f64,
    pub weight_cel: f64,
    pub temperature: f64,
}

impl Default for TrainSettings {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            batch_size: t.batch_size,
            peak_lr: t.peak_lr,
            max_epochs: t.max_epochs,
            warmup_fraction: t.warmup_fraction,
            dropout_rate: t.dropout_rate,
            styles_per_batch: t.styles_per_batch,
            weight_cl: t.loss.weight_cl,
            weight_cel: t.loss.weight_cel,
            temperature: t.loss.temperature,
        }
    }
}

impl TrainSettings {
    pub fn train_config(&self, mode: LossMode, sampler: SamplerMode, seed: u64) -> TrainConfig {
        TrainConfig {
            batch_size: self.batch_size,
            peak_lr: self.peak_lr,
            max_epochs: self.max_epochs,
            warmup_fraction: self.warmup_fraction,
            dropout_rate: self.dropout_rate,
            loss: LossSpec {
                mode,
                weight_cl: self.weight_cl,
                weight_cel: self.weight_cel,
                temperature: self.temperature,
            },
            sampler,
            styles_per_batch: self.styles_per_batch,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub loss_modes: Vec<GridLoss>,
    pub samplers: Vec<SamplerMode>,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self { loss_modes: GridLoss::ALL.to_vec(), samplers: SamplerMode::ALL.to_vec() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub seed: u64,
    /// Fine-tuning corpus; also the first probed dataset.
    pub corpus: DatasetConfig,
    /// Further datasets probed with every encoder (tokenized with the
    /// fine-tuning vocabulary).
    #[serde(default)]
    pub eval: Vec<DatasetConfig>,
    #[serde(default)]
    pub encoder: EncoderSettings,
    #[serde(default)]
    pub train: TrainSettings,
    #[serde(default)]
    pub grid: GridConfig,
    #[serde(default)]
    pub probe: ProbeConfig,
    /// Directory relative corpus paths resolve against; set by
    /// [`ExperimentConfig::load`].
    #[serde(skip)]
    pub base_dir: PathBuf,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("stylecl-out")
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut cfg = Self::from_toml(&fs::read_to_string(path)?)?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.grid.loss_modes.is_empty() {
            return Err(config("grid.loss_modes is empty"));
        }
        let trains = self.grid.loss_modes.iter().any(|m| matches!(m, GridLoss::CelCl | GridLoss::Cl));
        if trains && self.grid.samplers.is_empty() {
            return Err(config("grid.samplers is empty but CEL+CL or CL is requested"));
        }
        self.corpus.validate()?;
        for d in &self.eval {
            d.validate()?;
        }
        self.probe.validate()?;
        self.train.train_config(LossMode::CelCl, SamplerMode::RandomReplacement, self.seed).validate()
    }

    /// The executed cells in table order: PT, CEL (random sampler), then
    /// CEL+CL and CL under each sampler.
    pub fn cells(&self) -> Vec<Cell> {
        let mut out = Vec::new();
        for loss in GridLoss::ALL {
            if !self.grid.loss_modes.contains(&loss) {
                continue;
            }
            match loss {
                GridLoss::Pt => out.push(Cell { loss, sampler: None }),
                GridLoss::Cel => out.push(Cell { loss, sampler: Some(SamplerMode::RandomReplacement) }),
                _ => {
                    for s in SamplerMode::ALL {
                        if self.grid.samplers.contains(&s) {
                            out.push(Cell { loss, sampler: Some(s) });
                        }
                    }
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Cell {
    pub loss: GridLoss,
    pub sampler: Option<SamplerMode>,
}

impl Cell {
    /// Output subdirectory name, e.g. `cel_cl-pairwise`.
    pub fn dir_name(&self) -> String {
        let loss = self.loss.as_str().to_lowercase().replace('+', "_");
        match self.sampler {
            Some(s) if self.loss != GridLoss::Pt => format!("{loss}-{s}"),
            _ => loss,
        }
    }
}
