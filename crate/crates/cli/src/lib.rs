//! Library surface of the experiment runner: resolved configurations, the
//! training harnesses, and the subcommand entry points used by both the
//! binary and the acceptance suite.

pub mod commands;
pub mod config;
pub mod harness;

use thiserror::Error;

#[derive(Error, Debug)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),

    #[error("property failure: {0}")]
    PropertyFailure(String),

    #[error(transparent)]
    Core(#[from] svmax_core::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl CliError {
    /// Process exit code: 1 for property failures, 2 for anything that
    /// prevented the run.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::PropertyFailure(_) => 1,
            _ => 2,
        }
    }
}
