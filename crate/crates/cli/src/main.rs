//! `motionfit`: synthesize scenarios, fit motion, evaluate and inspect.
//!
//! Exit codes: 0 on success, 1 on numerical or I/O failure, 2 on invalid
//! arguments or inputs.

mod args;
mod commands;
mod error;
mod manifest;

use std::process::ExitCode;

use clap::Parser;

fn main() -> ExitCode {
    let cli = args::Cli::parse();
    match commands::execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
