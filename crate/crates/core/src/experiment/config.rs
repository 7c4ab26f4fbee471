//! Experiment configuration, stored as TOML.
//!
//! Top-level keys cover the training protocol; `[ot]`, `[optimizer]`,
//! `[model]` and `[data]` hold solver, Adam, architecture and synthetic-data
//! settings. Every key is optional and unknown keys are rejected.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::bagdata::SyntheticSpec;
use crate::error::{Error, Result};
use crate::microbatch::OtSettings;
use crate::neural::AdamSettings;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSettings {
    /// Shared embedding dimension.
    pub d: usize,
    pub n_heads: usize,
}

impl Default for ModelSettings {
    fn default() -> Self {
        Self { d: 32, n_heads: 4 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub folds: usize,
    /// Micro-batch size `m`; clamped to the bag size.
    pub micro_batch: usize,
    pub epochs: usize,
    /// Cases per optimizer step.
    pub grad_accum_steps: usize,
    /// Survival time bins.
    pub bins: usize,
    /// Run folds on separate threads.
    pub parallel_folds: bool,
    pub ot: OtSettings,
    pub optimizer: AdamSettings,
    pub model: ModelSettings,
    pub data: SyntheticSpec,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            folds: 5,
            micro_batch: 256,
            epochs: 20,
            grad_accum_steps: 32,
            bins: 4,
            parallel_folds: true,
            ot: OtSettings::default(),
            optimizer: AdamSettings::default(),
            model: ModelSettings::default(),
            data: SyntheticSpec::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_toml_string()).map_err(|e| Error::io(path, e))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.folds < 2 {
            return bad(format!("folds must be >= 2, got {}", self.folds));
        }
        if self.micro_batch == 0 {
            return bad("micro_batch must be >= 1".into());
        }
        if self.grad_accum_steps == 0 {
            return bad("grad_accum_steps must be >= 1".into());
        }
        if self.bins < 2 {
            return bad(format!("bins must be >= 2, got {}", self.bins));
        }
        if !(self.ot.epsilon > 0.0) || !(self.ot.tau >= 0.0) || !(self.ot.tol > 0.0) || self.ot.max_iters == 0 {
            return bad(format!("invalid [ot] settings {:?}", self.ot));
        }
        if !(self.optimizer.lr > 0.0) || !(self.optimizer.weight_decay >= 0.0) {
            return bad(format!("invalid [optimizer] settings {:?}", self.optimizer));
        }
        if self.model.n_heads == 0 || !self.model.d.is_multiple_of(self.model.n_heads) {
            return bad(format!(
                "model.d={} must be divisible by model.n_heads={}",
                self.model.d, self.model.n_heads
            ));
        }
        Ok(())
    }
}
