//! `pixreason` command-line entry point.
//!
//! Exit codes: 0 on success, 1 on usage or input errors, 2 when the policy
//! backend fails.

mod cmd;
mod io;

use std::process::ExitCode;

use clap::{Parser, Subcommand};
use tracing_subscriber::EnvFilter;

#[derive(Debug, Parser)]
#[command(name = "pixreason", version, about = "Tools for pixel-space reasoning agents")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Apply one crop_image / select_frames call to media files.
    ExecOp(cmd::exec_op::Args),
    /// Segment transcripts into trajectory JSONL.
    Parse(cmd::parse::Args),
    /// Score rollout records with the curiosity bonus and efficiency penalty.
    Reward(cmd::reward::Args),
    /// Group-relative advantages and replay-filled training batches.
    Advantages(cmd::advantages::Args),
    /// Run the policy simulator and write per-step metrics as CSV.
    Simulate(cmd::simulate::Args),
    /// Synthesize training trajectories with loss masks from seed examples.
    Synth(cmd::synth::Args),
    /// Roll out queries against an OpenAI-compatible policy endpoint.
    Rollout(cmd::rollout::Args),
}

/// A command failure with its exit code.
#[derive(Debug)]
pub enum Failure {
    Input(anyhow::Error),
    Backend(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Input(e)
    }
}

pub type CmdResult = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_env("PIXREASON_LOG").unwrap_or_else(|_| EnvFilter::new("warn")))
        .with_writer(std::io::stderr)
        .init();

    let result = match cli.command {
        Command::ExecOp(a) => cmd::exec_op::run(a),
        Command::Parse(a) => cmd::parse::run(a),
        Command::Reward(a) => cmd::reward::run(a),
        Command::Advantages(a) => cmd::advantages::run(a),
        Command::Simulate(a) => cmd::simulate::run(a),
        Command::Synth(a) => cmd::synth::run(a),
        Command::Rollout(a) => cmd::rollout::run(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Input(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
        Err(Failure::Backend(e)) => {
            eprintln!("backend error: {e:#}");
            ExitCode::from(2)
        }
    }
}
