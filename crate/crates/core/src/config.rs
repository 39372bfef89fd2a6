//! Run configuration, read from JSON. Unknown keys are rejected.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::agents::AgentConfig;
use crate::diffcomp::AdamConfig;
use crate::error::{Error, Result};
use crate::marlcc::{FusionConfig, OosObjective};
use crate::synthenv::DatasetConfig;
use crate::training::{LossWeights, RewardConfig};

pub const DEFAULT_SEED: u64 = 42;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global gradient-norm clip.
    pub clip_norm: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        let a = AdamConfig::default();
        OptimizerConfig { lr: a.lr, beta1: a.beta1, beta2: a.beta2, eps: a.eps, clip_norm: 5.0 }
    }
}

impl OptimizerConfig {
    pub fn adam(&self) -> AdamConfig {
        AdamConfig { lr: self.lr, beta1: self.beta1, beta2: self.beta2, eps: self.eps }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingConfig {
    pub epochs: usize,
    pub discount: f64,
    pub weights: LossWeights,
    /// Matched validation episodes scored for the per-epoch log; 0 disables.
    pub val_log_episodes: usize,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig { epochs: 30, discount: 0.95, weights: LossWeights::default(), val_log_episodes: 200 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RetrievalConfig {
    pub pool_size: usize,
    pub ks: Vec<usize>,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        RetrievalConfig { pool_size: 50, ks: vec![1, 10, 100] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub dataset: DatasetConfig,
    pub agents: AgentConfig,
    pub reward: RewardConfig,
    pub optimizer: OptimizerConfig,
    pub training: TrainingConfig,
    pub fusion: FusionConfig,
    pub oos_objective: OosObjective,
    pub retrieval: RetrievalConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: DEFAULT_SEED,
            dataset: DatasetConfig::default(),
            agents: AgentConfig::default(),
            reward: RewardConfig::default(),
            optimizer: OptimizerConfig::default(),
            training: TrainingConfig::default(),
            fusion: FusionConfig::default(),
            oos_objective: OosObjective::F1,
            retrieval: RetrievalConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.dataset.validate()?;
        self.agents.validate()?;
        self.reward.validate()?;
        if !(0.0..=1.0).contains(&self.training.discount) {
            return Err(Error::Config(format!("discount {} outside [0, 1]", self.training.discount)));
        }
        if self.optimizer.clip_norm <= 0.0 || self.optimizer.lr <= 0.0 {
            return Err(Error::Config("learning rate and clip norm must be positive".into()));
        }
        if self.retrieval.pool_size == 0 || self.retrieval.ks.contains(&0) {
            return Err(Error::Config("retrieval pool size and every K must be positive".into()));
        }
        Ok(())
    }

    /// Parses a config. A file without a `seed` key takes `default_seed`.
    pub fn from_json(text: &str, default_seed: u64) -> Result<Self> {
        let raw: serde_json::Value =
            serde_json::from_str(text).map_err(|e| Error::Config(format!("invalid JSON: {e}")))?;
        let has_seed = raw.get("seed").is_some();
        let mut cfg: RunConfig = serde_json::from_value(raw).map_err(|e| Error::Config(e.to_string()))?;
        if !has_seed {
            cfg.seed = default_seed;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, default_seed: u64) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text, default_seed).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}
