//! Experiment orchestration: config files, the slot loop, multi-seed runs
//! and file export.

pub mod cli;
mod episode;
mod experiment;

pub use episode::{
    episode_seed, gpasp_obs_dim, run_episode, CwndRecord, EpisodeInput, EpisodeOutput, SchedulerRuntime,
};
pub use experiment::{
    new_agent, read_episode_rows, run_experiment, train_agent, Aggregate, EpisodeRow, ExperimentReport, MetricStats,
    TrainOutcome,
};

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::cc::{CcConfig, ControllerKind};
use crate::error::{Error, Result};
use crate::gpasp::GpaspConfig;
use crate::metrics::ObjectiveWeights;
use crate::rhrm::MonitorParams;
use crate::scenario::ScenarioConfig;
use crate::sched::{FeatureScales, SchedulerKind};
use crate::transport::TransportConfig;

/// A scheduler + congestion-controller pairing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scheme {
    pub scheduler: SchedulerKind,
    pub cc: ControllerKind,
}

impl Scheme {
    pub fn new(scheduler: SchedulerKind, cc: ControllerKind) -> Self {
        Scheme { scheduler, cc }
    }

    pub fn label(&self) -> String {
        format!("{}+{}", self.scheduler, self.cc)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NnpeConfig {
    pub ridge_scale: f64,
    /// Per-slot forgetting factor; 1.0 keeps the full history.
    pub decay: f64,
    /// Feedback records kept per UE for light refits.
    pub buffer_len: usize,
}

impl Default for NnpeConfig {
    fn default() -> Self {
        NnpeConfig {
            ridge_scale: 1e-6,
            decay: 0.999,
            buffer_len: 2000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MonitorConfig {
    pub enabled: bool,
    /// Training episodes run on a full-retrain decision (learned scheduler only).
    pub retrain_episodes: usize,
    pub params: MonitorParams,
}

impl Default for MonitorConfig {
    fn default() -> Self {
        MonitorConfig {
            enabled: true,
            retrain_episodes: 2,
            params: MonitorParams {
                reward_floor: -2.0,
                ..MonitorParams::default()
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub schemes: Vec<Scheme>,
    pub seeds: Vec<u64>,
    pub episodes: usize,
    /// Slots per episode; one scenario period when absent.
    pub horizon: Option<usize>,
    /// Train the learned scheduler instead of evaluating a checkpoint.
    pub train: bool,
    /// Checkpoint directory for evaluation; `<out>/checkpoints` when absent.
    pub checkpoint_dir: Option<PathBuf>,
    pub export_traces: bool,
    /// Worker threads for independent seeds (0 = one per seed).
    pub threads: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            schemes: vec![Scheme::new(SchedulerKind::Nnpe, ControllerKind::Phacc)],
            seeds: vec![1],
            episodes: 1,
            horizon: None,
            train: false,
            checkpoint_dir: None,
            export_traces: false,
            threads: 0,
        }
    }
}

/// Complete contents of an experiment config file. Every section is
/// optional and falls back to defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub scenario: ScenarioConfig,
    pub transport: TransportConfig,
    pub cc: CcConfig,
    pub gpasp: GpaspConfig,
    pub nnpe: NnpeConfig,
    pub monitor: MonitorConfig,
    pub objective: ObjectiveWeights,
    /// Feature normalisers; derived from the scenario when absent.
    pub features: Option<FeatureScales>,
    pub run: RunConfig,
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> std::result::Result<Self, toml::de::Error> {
        toml::from_str(text)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg = Self::from_toml_str(&text).map_err(|source| Error::ConfigParse {
            path: path.to_path_buf(),
            source,
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// The scaled training scenario with the compact network.
    pub fn scaled() -> Self {
        ExperimentConfig {
            scenario: ScenarioConfig::scaled(),
            gpasp: GpaspConfig::compact(),
            ..ExperimentConfig::default()
        }
    }

    pub fn horizon(&self) -> usize {
        self.run.horizon.unwrap_or(self.scenario.slots_per_period)
    }

    pub fn feature_scales(&self) -> FeatureScales {
        self.features.unwrap_or_else(|| FeatureScales {
            srtt_cap_s: 0.5,
            snr_max_db: self.scenario.channels.iter().map(|c| c.snr_max_db).fold(1.0, f64::max),
            capacity_bps: self.scenario.channels.iter().map(|c| c.capacity_bps).fold(1.0, f64::max),
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.scenario.validate()?;
        let r = &self.run;
        if r.seeds.is_empty() {
            return Err(Error::Config("run.seeds must not be empty".into()));
        }
        if r.schemes.is_empty() {
            return Err(Error::Config("run.schemes must not be empty".into()));
        }
        if r.episodes == 0 {
            return Err(Error::Config("run.episodes must be at least 1".into()));
        }
        if self.horizon() == 0 || self.horizon() > self.scenario.slots_per_period {
            return Err(Error::Config(format!(
                "horizon must be in 1..={} (one scenario period)",
                self.scenario.slots_per_period
            )));
        }
        if r.train && r.schemes.iter().any(|s| s.scheduler != SchedulerKind::Gpasp) {
            return Err(Error::Config("training mode requires the gpasp scheduler".into()));
        }
        let g = &self.gpasp;
        if g.history_len == 0 || g.heads == 0 || g.d_z == 0 || g.hidden == 0 || g.minibatch == 0 {
            return Err(Error::Config("gpasp sizes must be positive".into()));
        }
        if !(0.0..=1.0).contains(&g.lr_final_fraction) {
            return Err(Error::Config("gpasp.lr_final_fraction must lie in [0, 1]".into()));
        }
        if !(0.0..=1.0).contains(&g.ema_beta) {
            return Err(Error::Config("gpasp.ema_beta must lie in [0, 1]".into()));
        }
        if self.objective.goodput < 0.0 || self.objective.ofo < 0.0 {
            return Err(Error::Config("objective weights must be nonnegative".into()));
        }
        Ok(())
    }
}

/// A resolved, validated experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSpec {
    pub config: ExperimentConfig,
    pub out_dir: PathBuf,
}

impl ExperimentSpec {
    pub fn new(config: ExperimentConfig, out_dir: impl Into<PathBuf>) -> Result<Self> {
        config.validate()?;
        Ok(ExperimentSpec {
            config,
            out_dir: out_dir.into(),
        })
    }

    pub fn checkpoint_dir(&self) -> PathBuf {
        self.config
            .run
            .checkpoint_dir
            .clone()
            .unwrap_or_else(|| self.out_dir.join("checkpoints"))
    }

    /// `<checkpoint_dir>/gpasp_seed<seed>.json`.
    pub fn checkpoint_path(&self, seed: u64) -> PathBuf {
        self.checkpoint_dir().join(format!("gpasp_seed{seed}.json"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_round_trips_through_toml() {
        let cfg = ExperimentConfig::default();
        let text = cfg.to_toml_string().unwrap();
        assert_eq!(ExperimentConfig::from_toml_str(&text).unwrap(), cfg);
    }

    #[test]
    fn sections_are_optional() {
        let cfg = ExperimentConfig::from_toml_str("[run]\nseeds = [4, 5]\n").unwrap();
        assert_eq!(cfg.run.seeds, vec![4, 5]);
        assert_eq!(cfg.scenario, ScenarioConfig::default());
    }

    #[test]
    fn rejects_bad_runs() {
        let mut cfg = ExperimentConfig::default();
        cfg.run.seeds.clear();
        assert!(cfg.validate().is_err());
        let mut cfg = ExperimentConfig::default();
        cfg.run.train = true;
        assert!(cfg.validate().is_err());
        assert!(ExperimentConfig::from_toml_str("[run]\nbogus = 1\n").is_err());
        assert!(ExperimentConfig::from_toml_str("[[run.schemes]]\nscheduler = \"fast\"\ncc = \"olia\"\n").is_err());
    }
}
