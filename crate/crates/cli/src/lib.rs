//! Driver for the `safe-field` binary.

pub mod commands;
pub mod config;

use std::fmt;

/// Failure classes, each with its own process exit code.
#[derive(Debug)]
pub enum CliError {
    /// A controller failed verification or a trajectory was unsafe.
    Failure(String),
    /// Bad or missing input.
    Config(String),
    /// The synthesis program was infeasible or the solver failed.
    Solver(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Failure(_) => 1,
            CliError::Config(_) => 2,
            CliError::Solver(_) => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Failure(m) => write!(f, "check failed: {m}"),
            CliError::Config(m) => write!(f, "configuration error: {m}"),
            CliError::Solver(m) => write!(f, "synthesis error: {m}"),
        }
    }
}

impl std::error::Error for CliError {}
