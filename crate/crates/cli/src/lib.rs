//! Experiment runner behind the `lapk` binary: registration runs, acceleration
//! sweeps, dataset export and evaluation of predicted flows.

pub mod config;
mod run;

pub use config::{ExperimentConfig, MaskChoice, Method};
pub use run::*;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Bad flags or configuration; exit code 2.
    #[error("usage: {0}")]
    Usage(String),
    /// Anything that failed while running; exit code 1.
    #[error("{0}")]
    Runtime(#[from] lapk_core::Error),
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.into())
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}
