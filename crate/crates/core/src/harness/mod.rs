//! Command-line driver: configuration, experiment recipes and file output.

pub mod cli;
pub mod config;
pub mod experiments;
pub mod output;

use thiserror::Error;

pub use config::{Coherence, DetectorConfig, ExperimentConfig, ExperimentParams, ObjectSpec};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config error{}: `{field}`: {message}", line.map(|l| format!(" at line {l}")).unwrap_or_default())]
    Config {
        line: Option<usize>,
        field: String,
        message: String,
    },

    #[error("output directory {0} is not empty (pass --overwrite to reuse it)")]
    OutputExists(String),

    #[error(transparent)]
    Core(#[from] crate::Error),

    #[error("{0}")]
    Io(#[from] std::io::Error),
}

impl HarnessError {
    /// Process exit code: 2 for configuration problems, 3 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config { .. } => 2,
            _ => 3,
        }
    }
}
