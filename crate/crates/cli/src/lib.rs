//! Library side of the `odm` binary: argument handling and command
//! implementations, exposed so integration tests can drive them in-process.

pub mod args;
pub mod commands;
pub mod scenario;

use thiserror::Error;

pub use args::{Cli, Command, RunConfig};

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad input: missing/malformed files, invalid flags or config (exit 2).
    #[error("{0}")]
    Input(String),
    /// Internal failure (exit 1).
    #[error("{0}")]
    Internal(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) => 2,
            CliError::Internal(_) => 1,
        }
    }
}

/// Dispatches a parsed command line; returns the process exit code.
pub fn run(cli: Cli) -> Result<i32, CliError> {
    match cli.command {
        Command::Replay(args) => {
            let cfg = RunConfig::resolve(&args)?;
            commands::run_replay(&cfg)?;
            Ok(0)
        }
        Command::Live(args) => {
            let cfg = RunConfig::resolve(&args)?;
            commands::run_live(&cfg)?;
            Ok(0)
        }
        Command::Synth(args) => {
            commands::run_synth(&args)?;
            Ok(0)
        }
        Command::Eval(args) => {
            commands::run_eval(&args)?;
            Ok(0)
        }
        Command::Gradcheck(args) => {
            let outcome = commands::run_gradcheck(&args)?;
            Ok(if outcome.passed { 0 } else { 1 })
        }
        Command::Export(args) => {
            let cfg = RunConfig::resolve(&args)?;
            commands::run_export(&cfg)?;
            Ok(0)
        }
    }
}
