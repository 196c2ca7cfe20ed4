//! `twinbeam` command-line pipeline.
//!
//! Exit status: 0 on success, 2 for invalid input, 3 for I/O failures and 4
//! when a computation breaks down numerically.

mod args;
mod commands;
mod error;
mod manifest;

use std::process::ExitCode;

use clap::Parser;

use args::{Cli, Command};
use error::{CliError, CliResult};

fn configure_threads(threads: Option<usize>) -> CliResult<()> {
    let Some(n) = threads else {
        return Ok(());
    };
    if n == 0 {
        return Err(CliError::invalid("thread count must be at least 1"));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::invalid(format!("cannot configure {n} threads: {e}")))
}

fn run(cli: Cli) -> CliResult<()> {
    configure_threads(cli.threads)?;
    match &cli.command {
        Command::Generate(a) => commands::generate(a),
        Command::Forward(a) => commands::forward(a),
        Command::Sample(a) => commands::sample(a),
        Command::Reconstruct(a) => commands::reconstruct_cmd(a),
        Command::Analyze(a) => commands::analyze(a),
        Command::Intensity(a) => commands::intensity(a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
