//! `pdls`: config-driven driver for the distributed solvers.
//!
//! Exit codes: 0 on success, 2 for config problems (unreadable file,
//! bad TOML, failed validation), 3 when a solver run fails.

mod compare;
mod config;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "pdls", version, about = "Distributed proximal-gradient experiment runner")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run every solver in the config on one shared instance.
    Run {
        /// TOML config path.
        config: PathBuf,
    },
    /// Check a config and print it with all defaults filled in.
    Validate {
        /// TOML config path.
        config: PathBuf,
    },
    /// Summarize the traces in a run directory side by side.
    Compare {
        /// Directory holding `<solver>.csv` traces.
        dir: PathBuf,
        /// Machine-readable output.
        #[arg(long)]
        json: bool,
    },
}

pub enum Failure {
    Config(String),
    Solver(String),
}

fn load(path: &PathBuf) -> Result<config::Resolved, Failure> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
    config::parse(&text).map_err(|e| Failure::Config(e.to_string()))
}

fn dispatch(cmd: Cmd) -> Result<(), Failure> {
    match cmd {
        Cmd::Run { config } => run::execute(&load(&config)?),
        Cmd::Validate { config } => {
            print!("{}", config::normalized(&load(&config)?));
            Ok(())
        }
        Cmd::Compare { dir, json } => compare::execute(&dir, json),
    }
}

fn main() -> ExitCode {
    match dispatch(Cli::parse().cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Solver(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(3)
        }
    }
}
