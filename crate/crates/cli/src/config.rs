//! Run configuration: one TOML file plus command-line overrides.

use std::path::{Path, PathBuf};

use hetsr::data::DatasetSpec;
use hetsr::train::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Directory receiving metrics, samples, checkpoints, and reports.
    pub output: PathBuf,
    /// Checkpoint read by `sr` / `eval`; empty means `<output>/checkpoint`.
    pub checkpoint: PathBuf,
    /// Generator updates performed by `train`.
    pub iterations: u64,
    /// Compute in 64-bit floating point.
    pub f64: bool,
    /// Write sample upscales every this many iterations (0 = only at the end).
    pub sample_every: u64,
    /// Save a checkpoint every this many iterations (0 = only at the end).
    pub checkpoint_every: u64,
    pub dataset: DatasetSpec,
    pub train: TrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            output: PathBuf::from("hetsr-run"),
            checkpoint: PathBuf::new(),
            iterations: 1000,
            f64: false,
            sample_every: 100,
            checkpoint_every: 500,
            dataset: DatasetSpec::default(),
            train: TrainConfig::default(),
        }
    }
}

/// Values given on the command line; they win over the file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub iterations: Option<u64>,
    pub f64: bool,
    pub output: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub dataset: Option<PathBuf>,
}

impl RunConfig {
    pub fn load(path: Option<&Path>, overrides: &Overrides) -> Result<Self, CliError> {
        let mut cfg = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| CliError::usage(format!("cannot read config {}: {e}", p.display())))?;
                toml::from_str(&text).map_err(|e| CliError::usage(format!("invalid config {}: {e}", p.display())))?
            }
            None => RunConfig::default(),
        };
        if let Some(seed) = overrides.seed {
            cfg.train.seed = seed;
            cfg.dataset.seed = seed;
        }
        if let Some(n) = overrides.iterations {
            cfg.iterations = n;
        }
        cfg.f64 |= overrides.f64;
        if let Some(o) = &overrides.output {
            cfg.output = o.clone();
        }
        if let Some(c) = &overrides.checkpoint {
            cfg.checkpoint = c.clone();
        }
        if let Some(d) = &overrides.dataset {
            cfg.dataset.root = d.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.train.validate().map_err(CliError::from)?;
        self.dataset.validate().map_err(CliError::from)?;
        if self.output.as_os_str().is_empty() {
            return Err(CliError::usage("output directory must not be empty"));
        }
        Ok(())
    }

    pub fn checkpoint_dir(&self) -> PathBuf {
        if self.checkpoint.as_os_str().is_empty() {
            self.output.join("checkpoint")
        } else {
            self.checkpoint.clone()
        }
    }

    /// The effective configuration as TOML; feeding it back reproduces the run.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }
}
