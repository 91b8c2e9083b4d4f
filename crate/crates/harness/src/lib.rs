//! Experiment driver for the signal-control environment: training runs,
//! fluctuation sweeps, histogram emission and the TCP environment bridge.

pub mod bridge;
pub mod config;
pub mod error;
pub mod experiment;

pub use config::{AgentKind, ExperimentConfig, LoadedExperiment};
pub use error::{HarnessError, Result};
