//! Single TOML run configuration. Every block is optional and defaults to
//! the standard hyperparameters.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::SynthSpec;
use crate::denoiser::{ModelConfig, TrainConfig};
use crate::error::{Error, Result};
use crate::metrics::EvalOptions;
use crate::refine::RefinementPlan;
use crate::reverse::SamplerOptions;
use crate::schedule::ScheduleConfig;
use crate::smc::SmcConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardKind {
    #[default]
    Lexical,
    Embed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardConfig {
    pub kind: RewardKind,
    /// Overrides the environment variable when set.
    pub url: Option<String>,
    pub timeout_secs: f64,
    /// Use the lexical reward when the service fails.
    pub fallback: bool,
}

impl Default for RewardConfig {
    fn default() -> Self {
        RewardConfig { kind: RewardKind::Lexical, url: None, timeout_secs: 10.0, fallback: false }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Load each record edge in both directions.
    pub symmetric: bool,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub schedule: ScheduleConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub sampler: SamplerOptions,
    /// Absent means the default plan scaled to `schedule.T`.
    pub refinement: Option<RefinementPlan>,
    pub smc: SmcConfig,
    pub reward: RewardConfig,
    pub eval: EvalOptions,
    pub data: DataConfig,
    pub synth: Option<SynthSpec>,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn plan(&self) -> RefinementPlan {
        self.refinement.clone().unwrap_or_else(|| RefinementPlan::default_for(self.schedule.steps))
    }

    pub fn validate(&self) -> Result<()> {
        if self.schedule.steps == 0 {
            return Err(Error::InvalidConfig("schedule.T must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.schedule.mask_mix) {
            return Err(Error::InvalidConfig(format!("schedule.mask_mix {} outside [0,1]", self.schedule.mask_mix)));
        }
        self.train.validate()?;
        self.plan().validate(self.schedule.steps)?;
        self.smc.validate()?;
        if !(self.reward.timeout_secs > 0.0 && self.reward.timeout_secs.is_finite()) {
            return Err(Error::InvalidConfig("reward.timeout_secs must be positive".into()));
        }
        if let Some(spec) = &self.synth {
            spec.validate()?;
        }
        Ok(())
    }
}
