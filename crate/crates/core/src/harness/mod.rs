//! Experiment configuration, orchestration and persistence.

mod config;
mod experiment;
mod output;
mod selftest;

use std::path::Path;

use thiserror::Error;

pub use config::{load_config, parse_config, RunConfig, TopologySource, WeightsMode};
pub use experiment::{
    build_topology_for, execute_seed, run_experiment, run_sweep, ExperimentReport, ProtocolOutcome, SeedOutcome,
    SweepAxis, SweepPoint, SweepReport,
};
pub use output::{fmt_float, report_bounds, trace_rows, BoundRow, Manifest, TraceRow, TRACE_HEADER};
pub use selftest::{selftest, SelfTestCheck};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HarnessError {
    #[error("config key `{key}`: {constraint}")]
    Invalid { key: String, constraint: String },
    #[error("unknown config key `{0}`")]
    UnknownKey(String),
    #[error("missing required config key `{0}`")]
    MissingKey(&'static str),
    #[error("config line {line}: expected `key = value`")]
    Syntax { line: usize },
    #[error("manifest {path}: {detail}")]
    Manifest { path: String, detail: String },
    #[error("{path}: {detail}")]
    Io { path: String, detail: String },
    #[error("topology: {0}")]
    Graph(#[from] crate::graph::GraphError),
    #[error("data generation: {0}")]
    Data(#[from] crate::datagen::DataError),
    #[error("protocol: {0}")]
    Protocol(#[from] crate::protocols::ProtocolError),
    #[error("regret: {0}")]
    Regret(#[from] crate::regret::RegretError),
}

impl HarnessError {
    pub(crate) fn invalid(key: &str, constraint: &str) -> Self {
        HarnessError::Invalid {
            key: key.to_string(),
            constraint: constraint.to_string(),
        }
    }

    pub(crate) fn io(path: &Path, err: impl std::fmt::Display) -> Self {
        HarnessError::Io {
            path: path.display().to_string(),
            detail: err.to_string(),
        }
    }

    /// Whether the error stems from user input rather than a runtime failure.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            HarnessError::Invalid { .. }
                | HarnessError::UnknownKey(_)
                | HarnessError::MissingKey(_)
                | HarnessError::Syntax { .. }
                | HarnessError::Manifest { .. }
                | HarnessError::Graph(_)
        )
    }
}
