//! `cvl`: drive the cross-view localization pipeline from the shell.
//!
//! Subcommands mirror the pipeline stages: `synth` builds a synthetic
//! benchmark, `project` warps ground frames to overhead view, `fuse`
//! collapses a warped sequence into one map, `retrieve` ranks database
//! tiles against a query, `eval` scores rankings, and `loss` computes the
//! training objective on a distance matrix.
//!
//! Exit codes: 0 success, 2 usage error, 3 bad data, 4 I/O failure.

mod commands;
mod config;
mod error;

use clap::{Parser, Subcommand};

use crate::error::{usage, CliResult};

#[derive(Parser)]
#[command(name = "cvl", version, about = "Cross-view localization pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic scene: database tiles, query sequences, poses.
    Synth(commands::synth::SynthArgs),
    /// Warp ground-level frames onto the overhead canvas.
    Project(commands::project::ProjectArgs),
    /// Fuse a sequence of warped frames into a single overhead map.
    Fuse(commands::fuse::FuseArgs),
    /// Rank database tiles against query maps and localize within the best.
    Retrieve(commands::retrieve::RetrieveArgs),
    /// Score ranking files: recall@k and per-query hit ranks.
    Eval(commands::eval::EvalArgs),
    /// Triplet loss (and optionally its gradient) for a distance matrix.
    Loss(commands::loss::LossArgs),
}

fn main() {
    let cli = Cli::parse();
    let code = match run(cli) {
        Ok(()) => 0,
        Err(err) => {
            eprintln!("error: {err}");
            err.exit_code()
        }
    };
    std::process::exit(code);
}

fn run(cli: Cli) -> CliResult<()> {
    init_thread_pool()?;
    match cli.command {
        Command::Synth(args) => commands::synth::run(args),
        Command::Project(args) => commands::project::run(args),
        Command::Fuse(args) => commands::fuse::run(args),
        Command::Retrieve(args) => commands::retrieve::run(args),
        Command::Eval(args) => commands::eval::run(args),
        Command::Loss(args) => commands::loss::run(args),
    }
}

/// Honor `CVL_THREADS` if set; 0 or unset leaves the pool size automatic.
/// Results are identical either way, only wall time changes.
fn init_thread_pool() -> CliResult<()> {
    let threads = match std::env::var("CVL_THREADS") {
        Err(_) => 0,
        Ok(raw) => raw
            .trim()
            .parse::<usize>()
            .map_err(|_| usage(format!("CVL_THREADS must be a non-negative integer, got '{raw}'")))?,
    };
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| usage(format!("failed to configure thread pool: {e}")))
}
