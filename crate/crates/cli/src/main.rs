//! `floodguard` command-line front end.
//!
//! Exit codes: 0 on success, 2 for usage and input errors (bad flags,
//! missing or malformed files, invalid configs), 1 for anything else.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{ArgAction, Parser};

use crate::commands::Command;

#[derive(Debug, Parser)]
#[command(name = "floodguard", version, about = "Adversarial training workbench for flow-based DDoS detectors")]
struct Cli {
    /// Pipeline config file (TOML); flags override its values.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Require single-threaded numeric code. Every numeric path is already
    /// single-threaded, so this only records the request in the log.
    #[arg(long, global = true)]
    deterministic: bool,

    /// More log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

fn exit_code(err: &anyhow::Error) -> u8 {
    let input =
        err.chain().any(|e| e.downcast_ref::<floodguard::Error>().is_some_and(floodguard::Error::is_input_error));
    if input {
        2
    } else {
        1
    }
}

/// `a: b: c` rendering of the error chain. Library errors already embed
/// their source in the message, so repeated tails are dropped.
fn render(err: &anyhow::Error) -> String {
    let mut out = String::new();
    for e in err.chain() {
        let msg = e.to_string();
        if out.ends_with(&msg) {
            continue;
        }
        if !out.is_empty() {
            out.push_str(": ");
        }
        out.push_str(&msg);
    }
    out
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    if cli.deterministic {
        log::info!("deterministic mode: numeric code runs on one thread");
    }
    let result = config::PipelineConfig::load_optional(cli.config.as_deref()).and_then(|cfg| cli.command.run(&cfg));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", render(&e));
            ExitCode::from(exit_code(&e))
        }
    }
}
