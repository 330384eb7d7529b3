//! Experiment front door: every sweep and demo in the toolkit runs through
//! one of these subcommands, reading a TOML config and writing a manifest
//! plus CSV artifacts into the output directory.

mod config;
mod run;

use clap::{Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "beltkit", version, about = "Deterministic imitation-learning and tracking experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
enum SubcommandKind {
    MazeSweep,
    GpDemo,
    TrackingSweep,
    SpeedSweep,
    MotionSweep,
    GmmDemo,
    MemoryRecite,
    Episode,
}

#[derive(clap::Args)]
struct CommonArgs {
    /// TOML config file; omitted fields fall back to built-in defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory for the manifest and CSV artifacts.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Base seed override (flags > config file > defaults).
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; 0 uses all cores, 1 is the sequential baseline.
    #[arg(long, default_value_t = 0)]
    jobs: usize,
}

#[derive(Subcommand)]
enum Command {
    /// MazeNav imitation sweep over nuisance size, action noise, and demo count.
    MazeSweep(CommonArgs),
    /// Gaussian-process regression and velocity estimation on a 1-D trajectory.
    GpDemo(CommonArgs),
    /// Closed-loop tracking traces across belt speeds plus the max stable speed.
    TrackingSweep(CommonArgs),
    /// Skill success rate across belt speeds.
    SpeedSweep(CommonArgs),
    /// Skill success rate across belt motion patterns.
    MotionSweep(CommonArgs),
    /// Two-target contrast between a unimodal and a mixture controller.
    GmmDemo(CommonArgs),
    /// Gated-memory digit recitation training curve.
    MemoryRecite(CommonArgs),
    /// A single conveyor episode with a full trace.
    Episode(CommonArgs),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (kind, args) = match &cli.command {
        Command::MazeSweep(a) => (SubcommandKind::MazeSweep, a),
        Command::GpDemo(a) => (SubcommandKind::GpDemo, a),
        Command::TrackingSweep(a) => (SubcommandKind::TrackingSweep, a),
        Command::SpeedSweep(a) => (SubcommandKind::SpeedSweep, a),
        Command::MotionSweep(a) => (SubcommandKind::MotionSweep, a),
        Command::GmmDemo(a) => (SubcommandKind::GmmDemo, a),
        Command::MemoryRecite(a) => (SubcommandKind::MemoryRecite, a),
        Command::Episode(a) => (SubcommandKind::Episode, a),
    };
    match run::dispatch(kind, args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::FAILURE
        }
    }
}
