//! Run configuration, read from TOML. Every section is optional; unknown
//! keys are rejected with the offending key in the message.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::cmaes::{CmaConfig, Schedule};
use crate::error::{Error, Result};
use crate::estimator::EstimatorConfig;
use crate::gait::GaitSchedules;
use crate::reward::{RewardEngine, SwitchCriteria, TaskReferences};
use crate::sac::SacConfig;
use crate::sim::{PdGains, SimConfig, Simulator};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingSettings {
    /// Epochs for each single-skill expert.
    pub expert_epochs: usize,
    /// Epochs for the gating network when trained on its own.
    pub gating_epochs: usize,
}

impl Default for TrainingSettings {
    fn default() -> Self {
        TrainingSettings {
            expert_epochs: 50,
            gating_epochs: 100,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CriteriaSettings {
    pub cma: CmaConfig,
    pub schedule: Schedule,
    pub episodes_per_candidate: usize,
    /// Criteria used when none have been optimized yet.
    pub initial: SwitchCriteria,
}

impl Default for CriteriaSettings {
    fn default() -> Self {
        CriteriaSettings {
            cma: CmaConfig::default(),
            schedule: Schedule::default(),
            episodes_per_candidate: 2,
            initial: SwitchCriteria::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimatorSettings {
    /// Collection episodes; each yields 248 pairs.
    pub episodes: usize,
    pub epochs: usize,
    pub hidden: Vec<usize>,
    pub lr: f64,
    pub weight_decay: f64,
    pub batch: usize,
}

impl Default for EstimatorSettings {
    fn default() -> Self {
        let d = EstimatorConfig::default();
        EstimatorSettings {
            episodes: 867,
            epochs: d.epochs,
            hidden: d.hidden,
            lr: d.lr,
            weight_decay: d.weight_decay,
            batch: d.batch,
        }
    }
}

impl EstimatorSettings {
    pub fn trainer_config(&self) -> EstimatorConfig {
        EstimatorConfig {
            hidden: self.hidden.clone(),
            epochs: self.epochs,
            lr: self.lr,
            weight_decay: self.weight_decay,
            batch: self.batch,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    pub sim: SimConfig,
    pub pd: PdGains,
    /// Derived from the sim configuration when omitted.
    pub references: Option<TaskReferences>,
    pub gaits: GaitSchedules,
    pub sac: SacConfig,
    pub training: TrainingSettings,
    pub criteria: CriteriaSettings,
    pub estimator: EstimatorSettings,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            output_dir: PathBuf::from("runs"),
            sim: SimConfig::default(),
            pd: PdGains::default(),
            references: None,
            gaits: GaitSchedules::default(),
            sac: SacConfig::default(),
            training: TrainingSettings::default(),
            criteria: CriteriaSettings::default(),
            estimator: EstimatorSettings::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.sim.validate()?;
        self.pd.validate()?;
        self.gaits.validate()?;
        self.references().validate()?;
        self.sac.validate()?;
        self.criteria.cma.validate()?;
        self.criteria.initial.validate()?;
        if self.estimator.batch == 0 {
            return Err(Error::Config("estimator.batch must be > 0".into()));
        }
        Ok(())
    }

    pub fn references(&self) -> TaskReferences {
        self.references
            .clone()
            .unwrap_or_else(|| TaskReferences::for_sim(&self.sim))
    }

    pub fn simulator(&self) -> Simulator {
        Simulator::new(self.sim.clone(), self.pd.clone())
    }

    pub fn engine(&self) -> RewardEngine {
        RewardEngine::new(self.references(), self.gaits.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_carry_training_constants() {
        let c = RunConfig::default();
        assert_eq!(c.sac.lr, 3e-4);
        assert_eq!(c.sac.weight_decay, 1e-6);
        assert_eq!(c.sac.batch, 128);
        assert_eq!(c.sac.buffer_capacity, 1_000_000);
        assert_eq!(c.sac.tau, 0.001);
        assert_eq!(c.sac.steps_per_epoch, 5000);
        assert_eq!(c.criteria.cma.population, 50);
        assert_eq!(c.criteria.cma.sigma0, 1.0);
        assert_eq!(c.criteria.cma.initial_mean, [2.0, 5.0]);
        assert_eq!(c.criteria.schedule.epochs_per_generation, 20);
        assert_eq!(c.estimator.lr, 1e-3);
        assert_eq!(c.estimator.weight_decay, 5e-4);
        assert_eq!(c.estimator.batch, 1024);
    }

    #[test]
    fn round_trips_through_toml() {
        let c = RunConfig::default();
        let text = c.to_toml_string().unwrap();
        assert_eq!(RunConfig::from_toml_str(&text).unwrap(), c);
    }

    #[test]
    fn partial_file_fills_defaults() {
        let c = RunConfig::from_toml_str("seed = 9\n[sac]\nbatch = 64\n").unwrap();
        assert_eq!(c.seed, 9);
        assert_eq!(c.sac.batch, 64);
        assert_eq!(c.sac.lr, 3e-4);
    }

    #[test]
    fn unknown_keys_are_named() {
        let err = RunConfig::from_toml_str("[sac]\nbatchsize = 64\n").unwrap_err();
        assert!(err.to_string().contains("batchsize"), "{err}");
        let err = RunConfig::from_toml_str("[sim.contact]\nstiffnes = 1.0\n").unwrap_err();
        assert!(err.to_string().contains("stiffnes"), "{err}");
    }

    #[test]
    fn invalid_values_are_rejected() {
        assert!(RunConfig::from_toml_str("[sac]\ngamma = 1.5\n").is_err());
        assert!(RunConfig::from_toml_str("[criteria.initial]\nx1 = 6.0\nx2 = 5.0\n").is_err());
    }
}
