//! `dexgrasp` command-line front end.
//!
//! Exit codes: 0 on success, 1 when `validate` finds failing records, 2 on
//! errors.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "dexgrasp", version, about = "Grasp synthesis, refinement and evaluation toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// TOML run configuration; defaults apply when omitted.
    #[arg(long, short)]
    config: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SceneArgs {
    /// `sphere`, `box`, or a PLY cloud (an optional `<file>.json` sidecar
    /// holds the object pose, id and scale).
    #[arg(long)]
    scene: String,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Export an equivolumetric SO(3) grid as CSV.
    Grid {
        #[arg(long, default_value_t = 0)]
        level: u32,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Synthesize grasps by energy descent, one run per (scene, seed).
    Synth {
        /// Scene to run on; repeat for several scenes.
        #[arg(long = "scene", required = true)]
        scenes: Vec<String>,
        /// Runs per scene.
        #[arg(long, default_value_t = 1)]
        seeds: u64,
        /// Base seed; run `i` uses `rng + i`. Defaults to `optimizer.seed`.
        #[arg(long)]
        rng: Option<u64>,
        #[arg(long)]
        out: PathBuf,
        /// Directory receiving one energy-trajectory CSV per run.
        #[arg(long)]
        trajectories: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Refine grasps toward a target contact map.
    Refine {
        #[arg(long)]
        records: PathBuf,
        /// Contact-map JSON (`{"heat": [...]}`) shared by all records, or a
        /// record file whose grasps define the targets: one record for all
        /// inputs or one per input.
        #[arg(long)]
        target: PathBuf,
        #[command(flatten)]
        scene: SceneArgs,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Compute Q1, penetration and gravity resistance for each record.
    Eval {
        #[arg(long)]
        records: PathBuf,
        #[command(flatten)]
        scene: SceneArgs,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Apply the dataset filter; exits with 1 when any record fails.
    Validate {
        #[arg(long)]
        records: PathBuf,
        #[command(flatten)]
        scene: SceneArgs,
        /// Records annotated with the verdicts.
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Aggregate diversity, quality and MPE tables as CSV.
    Metrics {
        #[arg(long)]
        records: PathBuf,
        /// Goal grasps paired line by line with `records` for MPE.
        #[arg(long)]
        goals: Option<PathBuf>,
        /// Output CSV; standard output when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Evaluate the goal-conditioned reward on a rollout log.
    Reward {
        /// JSON lines, one rollout state per step.
        #[arg(long)]
        rollout: PathBuf,
        /// Output CSV; standard output when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(cli.command) {
        Ok(commands::Outcome::Ok) => ExitCode::SUCCESS,
        Ok(commands::Outcome::ValidationFailed) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
