use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::PersistError;
use crate::evaluation::DEFAULT_MASK_THRESHOLD;
use crate::index::IndexConfig;
use crate::sampler::SamplingConfig;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalDefaults {
    pub grid_rows: usize,
    pub grid_cols: usize,
    /// KDE bandwidth; `None` means extent diagonal / 64.
    pub bandwidth: Option<f64>,
    pub mask_threshold: f64,
    pub warmup: usize,
    pub repetitions: usize,
}

impl Default for EvalDefaults {
    fn default() -> Self {
        EvalDefaults {
            grid_rows: 256,
            grid_cols: 256,
            bandwidth: None,
            mask_threshold: DEFAULT_MASK_THRESHOLD,
            warmup: crate::evaluation::WARMUP_RUNS,
            repetitions: 5,
        }
    }
}

/// Contents of a JSON configuration file.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AppConfig {
    pub index: IndexConfig,
    pub sampling: SamplingConfig,
    #[serde(default)]
    pub evaluation: EvalDefaults,
    /// Seed for buffer construction.
    #[serde(default)]
    pub build_seed: u64,
}

impl AppConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, PersistError> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    pub fn from_json(text: &str) -> Result<Self, PersistError> {
        let cfg: AppConfig = serde_json::from_str(text)?;
        cfg.index.validate()?;
        if cfg.sampling.validate().is_err() {
            return Err(PersistError::Corrupt("sampling.updates_per_level must be at least 1".into()));
        }
        Ok(cfg)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), PersistError> {
        fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}
