//! Experiment configuration files.
//!
//! Paths inside a config are resolved relative to the config file itself.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use tsc_core::agents::TdHyperparams;
use tsc_core::demand::OdMatrix;
use tsc_core::env::{EnvConfig, LinkWeighting, RewardParams};
use tsc_core::signal::PhaseTiming;
use tsc_core::sim::SimConfig;
use tsc_core::topology::NetworkConfig;

use crate::error::{HarnessError, Result};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentKind {
    Fixed,
    Feedback,
    Td,
    Remote,
}

impl AgentKind {
    pub fn as_str(self) -> &'static str {
        match self {
            AgentKind::Fixed => "fixed",
            AgentKind::Feedback => "feedback",
            AgentKind::Td => "td",
            AgentKind::Remote => "remote",
        }
    }

    pub fn needs_checkpoint(self) -> bool {
        matches!(self, AgentKind::Td | AgentKind::Remote)
    }
}

fn format_version() -> u32 {
    FORMAT_VERSION
}
fn default_ratios() -> Vec<f64> {
    vec![0.0, 0.1, 0.2, 0.3]
}
fn default_repeats() -> usize {
    5
}
fn default_split() -> u32 {
    50
}
fn default_warmup() -> u32 {
    1800
}
fn default_interval() -> u32 {
    100
}
fn default_steps() -> usize {
    144
}
fn default_weighting() -> LinkWeighting {
    LinkWeighting::Uniform
}
fn default_baseline() -> AgentKind {
    AgentKind::Fixed
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "format_version")]
    pub format_version: u32,
    /// Network JSON file.
    pub network: PathBuf,
    /// OD matrix CSV.
    pub demand: PathBuf,
    pub agent: AgentKind,
    #[serde(default = "default_baseline")]
    pub baseline: AgentKind,
    #[serde(default)]
    pub episodes: usize,
    #[serde(default = "default_ratios")]
    pub fluctuation_ratios: Vec<f64>,
    #[serde(default = "default_repeats")]
    pub repeats: usize,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub reward: RewardParams,
    #[serde(default = "default_weighting")]
    pub link_weighting: LinkWeighting,
    #[serde(default)]
    pub timing: PhaseTiming,
    #[serde(default)]
    pub sim: SimConfig,
    #[serde(default)]
    pub td: TdHyperparams,
    #[serde(default = "default_split")]
    pub initial_split_s: u32,
    #[serde(default)]
    pub offsets_s: Vec<u32>,
    #[serde(default = "default_warmup")]
    pub warmup_s: u32,
    #[serde(default = "default_interval")]
    pub control_interval_s: u32,
    #[serde(default = "default_steps")]
    pub steps_per_episode: usize,
}

/// A config with its files read and validated.
#[derive(Debug, Clone)]
pub struct LoadedExperiment {
    pub config: ExperimentConfig,
    pub network: NetworkConfig,
    pub demand: OdMatrix,
    /// Directory the config was read from.
    pub base_dir: PathBuf,
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.format_version != FORMAT_VERSION {
            return Err(HarnessError::Config(format!(
                "unsupported format_version {}",
                self.format_version
            )));
        }
        if self.repeats == 0 {
            return Err(HarnessError::Config("repeats must be at least 1".into()));
        }
        if self.fluctuation_ratios.is_empty() {
            return Err(HarnessError::Config("fluctuation_ratios is empty".into()));
        }
        for &r in &self.fluctuation_ratios {
            if !(0.0..1.0).contains(&r) {
                return Err(HarnessError::Config(format!("fluctuation ratio {r} outside [0, 1)")));
            }
        }
        if self.baseline.needs_checkpoint() {
            return Err(HarnessError::Config("baseline must be fixed or feedback".into()));
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<LoadedExperiment> {
        let text = read(path)?;
        let config: ExperimentConfig = serde_json::from_str(&text).map_err(|e| HarnessError::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        config.validate()?;
        let base_dir = path
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_else(|| PathBuf::from("."));
        let network_path = base_dir.join(&config.network);
        let network: NetworkConfig =
            serde_json::from_str(&read(&network_path)?).map_err(|e| HarnessError::Parse {
                path: network_path.clone(),
                message: e.to_string(),
            })?;
        let topology = network.build()?;
        let demand_path = base_dir.join(&config.demand);
        let file = fs::File::open(&demand_path).map_err(|e| HarnessError::io(&demand_path, e))?;
        let demand = OdMatrix::read_csv(file, &topology)
            .map_err(|e| HarnessError::from(e).context(demand_path.display().to_string()))?;
        let loaded = LoadedExperiment {
            config,
            network,
            demand,
            base_dir,
        };
        loaded.env_config(None)?;
        Ok(loaded)
    }
}

impl LoadedExperiment {
    pub fn env_config(&self, fluctuation_ratio: Option<f64>) -> Result<EnvConfig> {
        let c = &self.config;
        let env = EnvConfig {
            network: self.network.clone(),
            timing: c.timing,
            initial_split_s: c.initial_split_s,
            offsets_s: c.offsets_s.clone(),
            sim: c.sim,
            reward: c.reward,
            link_weighting: c.link_weighting.clone(),
            demand: self.demand.clone(),
            fluctuation_ratio: fluctuation_ratio.filter(|&r| r > 0.0),
            warmup_s: c.warmup_s,
            control_interval_s: c.control_interval_s,
            steps_per_episode: c.steps_per_episode,
        };
        tsc_core::env::TscEnv::new(env.clone())?;
        Ok(env)
    }

    pub fn resolve(&self, path: &Path) -> PathBuf {
        self.base_dir.join(path)
    }
}
