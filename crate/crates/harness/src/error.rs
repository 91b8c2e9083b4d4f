use std::path::PathBuf;

use serde::Serialize;
use thiserror::Error;
use tsc_core::agents::{AgentError, RolloutError};
use tsc_core::demand::DemandError;
use tsc_core::env::EnvError;
use tsc_core::topology::TopologyError;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("invalid config: {0}")]
    Config(String),
    #[error("agent kind {0} needs a checkpoint")]
    MissingCheckpoint(&'static str),
    #[error("agent kind {0} cannot be trained")]
    NotLearnable(&'static str),
    #[error("queue table {0} has no observations")]
    EmptyTable(PathBuf),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Topology(#[from] TopologyError),
    #[error(transparent)]
    Demand(#[from] DemandError),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<HarnessError>,
    },
}

impl From<RolloutError> for HarnessError {
    fn from(e: RolloutError) -> Self {
        match e {
            RolloutError::Env(e) => HarnessError::Env(e),
            RolloutError::Agent(e) => HarnessError::Agent(e),
        }
    }
}

impl HarnessError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        HarnessError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn context(self, context: impl Into<String>) -> Self {
        HarnessError::Context {
            context: context.into(),
            source: Box::new(self),
        }
    }

    /// Stable machine-readable category.
    pub fn code(&self) -> &'static str {
        match self {
            HarnessError::Io { .. } => "io",
            HarnessError::Parse { .. } => "parse",
            HarnessError::Config(_) => "config",
            HarnessError::MissingCheckpoint(_) => "missing_checkpoint",
            HarnessError::NotLearnable(_) => "not_learnable",
            HarnessError::EmptyTable(_) => "empty_table",
            HarnessError::Env(_) => "env",
            HarnessError::Agent(_) => "agent",
            HarnessError::Topology(_) => "topology",
            HarnessError::Demand(_) => "demand",
            HarnessError::Csv(_) => "csv",
            HarnessError::Json(_) => "json",
            HarnessError::Context { source, .. } => source.code(),
        }
    }

    pub fn to_json(&self) -> String {
        #[derive(Serialize)]
        struct Body<'a> {
            ok: bool,
            error: &'a str,
            message: String,
        }
        serde_json::to_string(&Body {
            ok: false,
            error: self.code(),
            message: self.to_string(),
        })
        .expect("error body serializes")
    }
}

pub type Result<T> = std::result::Result<T, HarnessError>;
