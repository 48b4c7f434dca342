use std::path::{Path, PathBuf};

use dehazemamba_core::data::DataConfig;
use dehazemamba_core::network::ModelConfig;
use dehazemamba_core::train::TrainConfig;
use dehazemamba_core::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchConfig {
    pub lengths: Vec<usize>,
    pub repetitions: usize,
    pub warmup: usize,
    pub dim: usize,
    pub state: usize,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            lengths: vec![256, 512, 1024, 2048, 4096],
            repetitions: 11,
            warmup: 2,
            dim: 64,
            state: 16,
            seed: 0,
        }
    }
}

impl BenchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lengths.len() < 3 {
            return Err(Error::Config(format!(
                "bench needs at least 3 lengths for a slope, got {}",
                self.lengths.len()
            )));
        }
        if self.lengths.contains(&0) || self.repetitions == 0 || self.dim == 0 || self.state == 0 {
            return Err(Error::Config("bench lengths, repetitions, dim and state must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsConfig {
    /// Written by `train`, read by `infer`, `eval` and `train --resume`.
    pub checkpoint: PathBuf,
    /// Training metrics log.
    pub log: PathBuf,
    /// Report destination; standard output when absent.
    pub report: Option<PathBuf>,
}

impl Default for PathsConfig {
    fn default() -> Self {
        Self {
            checkpoint: PathBuf::from("runs/model.dhmb"),
            log: PathBuf::from("runs/train.tsv"),
            report: None,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub data: DataConfig,
    pub bench: BenchConfig,
    pub paths: PathsConfig,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn dump(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Applies a command-line seed to every seeded section.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.train.seed = seed;
        self.data.seed = seed;
        self.bench.seed = seed;
        self
    }
}
