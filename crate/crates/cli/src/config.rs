//! Experiment configuration, loaded from one TOML document.

use std::path::{Path, PathBuf};

use aepo_core::env::EnvConfig;
use aepo_core::metrics::EvalSettings;
use aepo_core::policy::PolicyInit;
use aepo_core::trainer::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::ablation::Variant;
use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    /// Training tasks written by `generate`.
    pub n_tasks: usize,
    /// Held-out tasks written next to them; 0 skips the file.
    pub eval_tasks: usize,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            n_tasks: 2000,
            eval_tasks: 1000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Master seed. Dataset streams derive from it and it replaces `train.seed`.
    pub seed: u64,
    pub variant: Variant,
    pub output_dir: PathBuf,
    pub dataset: DatasetConfig,
    pub env: EnvConfig,
    pub policy: PolicyInit,
    pub train: TrainConfig,
    pub eval: EvalSettings,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            variant: Variant::Full,
            output_dir: PathBuf::from("out"),
            dataset: DatasetConfig::default(),
            env: EnvConfig::default(),
            policy: PolicyInit::default(),
            train: TrainConfig::default(),
            eval: EvalSettings::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        let cfg: Self = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.env.validate()?;
        self.train.validate()?;
        if self.dataset.n_tasks == 0 {
            return Err(CliError::Config("dataset.n_tasks must be >= 1".into()));
        }
        if self.eval.seeds.is_empty() {
            return Err(CliError::Config("eval.seeds must not be empty".into()));
        }
        if !(self.eval.temperature > 0.0 && self.eval.temperature.is_finite()) {
            return Err(CliError::Config("eval.temperature must be positive".into()));
        }
        if self.eval.pass_k_values.contains(&0) {
            return Err(CliError::Config("eval.pass_k_values must be >= 1".into()));
        }
        let p = &self.policy;
        if ![p.score_scale, p.count_decay, p.entropy_gain]
            .iter()
            .all(|x| x.is_finite())
        {
            return Err(CliError::Config("policy init values must be finite".into()));
        }
        Ok(())
    }

    /// Training settings after applying the master seed and the variant.
    pub fn resolved_train(&self) -> TrainConfig {
        let mut t = self.variant.apply(&self.train);
        t.seed = self.seed;
        t
    }
}
