//! TOML run configuration shared by the command-line tools.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::SyntheticConfig;
use crate::error::{Result, SanError};
use crate::eval::{ExperimentConfig, Method, Protocol, DEFAULT_SEEDS};
use crate::training::{TrainingConfig, LAMBDA_GRID};

/// Everything a run needs besides command-line overrides.
///
/// ```toml
/// method = "san"
/// seeds = [0, 1, 2, 3, 4]
///
/// [protocol]
/// kind = "general"
/// train_ratio = 0.75
///
/// [training]
/// encoder = "gcn"
/// eta = 0.01
///
/// [synthetic]
/// n_samples = 2000
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub method: Method,
    pub seeds: Vec<u64>,
    pub lambda_grid: Vec<f64>,
    pub protocol: Protocol,
    pub training: TrainingConfig,
    pub synthetic: SyntheticConfig,
    pub corpus: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            method: Method::San,
            seeds: DEFAULT_SEEDS.to_vec(),
            lambda_grid: LAMBDA_GRID.to_vec(),
            protocol: Protocol::default(),
            training: TrainingConfig::default(),
            synthetic: SyntheticConfig::default(),
            corpus: None,
            out_dir: None,
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str, source: &str) -> Result<RunConfig> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| SanError::Config(format!("{source}: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<RunConfig> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| SanError::io(path, e))?;
        RunConfig::from_toml(&text, &path.display().to_string())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.training.validate()?;
        self.synthetic.validate()?;
        if self.seeds.is_empty() {
            return Err(SanError::Config("seeds must not be empty".into()));
        }
        if self.lambda_grid.iter().any(|l| !(*l >= 0.0) || !l.is_finite()) {
            return Err(SanError::Config("lambda_grid values must be finite and >= 0".into()));
        }
        if let Protocol::General { train_ratio, .. } = self.protocol {
            if !(train_ratio > 0.0 && train_ratio < 1.0) {
                return Err(SanError::Config(format!("train_ratio must lie in (0, 1), got {train_ratio}")));
            }
        }
        Ok(())
    }

    pub fn experiment(&self) -> ExperimentConfig {
        ExperimentConfig {
            protocol: self.protocol.clone(),
            method: self.method,
            training: self.training.clone(),
            seeds: self.seeds.clone(),
        }
    }

    /// True when `lambda` is one of the searched grid values.
    pub fn lambda_in_grid(&self, lambda: f64) -> bool {
        self.lambda_grid.contains(&lambda)
    }
}
