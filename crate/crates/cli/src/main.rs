//! `gdpp-lab`: train models, reproduce the comparison tables, run the
//! efficiency sweeps and evaluate saved checkpoints.

mod args;
mod commands;
mod tables;

use std::process::ExitCode;

use clap::Parser;

use args::Cli;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Bad flags, config file or settings. Exit code 2.
    #[error("{0}")]
    Usage(String),
    /// Training or I/O failed. Exit code 1.
    #[error(transparent)]
    Runtime(#[from] gdpp::Error),
    /// Some runs failed; their errors have already been reported.
    #[error("{failed} of {total} runs failed")]
    PartialFailure { failed: usize, total: usize },
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) | CliError::PartialFailure { .. } => 1,
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            e.print().ok();
            return ExitCode::from(code);
        }
    };
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
