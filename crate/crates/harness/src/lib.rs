//! Experiment runner for gated imitation learning.
//!
//! A run takes an [`ExperimentConfig`], pretrains a policy per seed, runs
//! the selected algorithm with no-intervention test rollouts after every
//! epoch, and writes:
//!
//! ```text
//! <out>/manifest.json      resolved config, content hash, versions, timing
//! <out>/summary.json       aggregate over seeds
//! <out>/aggregate.csv      per-epoch means over seeds
//! <out>/seed-<s>/metrics.csv
//! <out>/seed-<s>/summary.json
//! <out>/seed-<s>/episodes/epoch-<k>.jsonl   interactive episode logs
//! <out>/seed-<s>/tests/after-<k>.jsonl      test logs after k epochs
//! <out>/seed-<s>/checkpoints/               networks and resume state
//! ```

use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;

pub mod config;
pub mod report;
pub mod run;

pub use config::{validate_config, AlgorithmId, ConfigError, ConfigIssue, ExperimentConfig, ThresholdSetting};
pub use report::{compare, Comparison, RunSummary, SeedSummary};
pub use run::{calibrate, pretrain, run_experiment, run_experiment_with, RunManifest, RunOptions};

pub type Result<T, E = HarnessError> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error(transparent)]
    Config(#[from] ConfigError),

    #[error(transparent)]
    Core(#[from] lazydagger_core::Error),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },

    #[error("{dir} holds a different experiment (config hash {found}, expected {expected})")]
    OutputMismatch {
        dir: PathBuf,
        found: String,
        expected: String,
    },

    #[error("missing artifact {0}")]
    MissingArtifact(PathBuf),

    #[error("incompatible runs: {0}")]
    SchemaMismatch(String),

    #[error("seed {seed} stopped after epoch {epoch}; rerun to resume")]
    Interrupted { seed: u64, epoch: usize },

    #[error("seed {seed}: test rollouts contain {steps} supervisor steps")]
    TestPurity { seed: u64, steps: usize },
}

impl HarnessError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        HarnessError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub(crate) fn csv(path: &Path, source: csv::Error) -> Self {
        HarnessError::Csv {
            path: path.to_path_buf(),
            source,
        }
    }
}

pub(crate) fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            HarnessError::MissingArtifact(path.to_path_buf())
        } else {
            HarnessError::io(path, e)
        }
    })?;
    serde_json::from_str(&text).map_err(|source| HarnessError::Json {
        path: path.to_path_buf(),
        source,
    })
}

/// Writes through a temporary file so readers never see a partial file.
pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|source| HarnessError::Json {
        path: path.to_path_buf(),
        source,
    })?;
    write_atomic(path, text.as_bytes())
}

pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes).map_err(|e| HarnessError::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| HarnessError::io(path, e))
}

pub(crate) fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| HarnessError::io(path, e))
}
