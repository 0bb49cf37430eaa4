//! `dpp`: train, evaluate and inspect deceptive path-planning policies.

mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use dpp_core::error::ErrorCategory;

#[derive(Debug, Parser)]
#[command(
    name = "dpp",
    version,
    about = "Deceptive path planning with graph policies",
    after_help = "Figure colours: start blue, true goal green, decoy orange. \
Heatmaps run from white (lowest value) to dark purple (highest).\n\
Exit codes: 0 success, 2 usage error, 3 data or geometry error, 4 numeric error."
)]
pub struct Cli {
    /// Seed for every random choice the command makes.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    /// JSON run configuration with optional train, policy, reward and forest sections.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a policy with PPO on gridworld maps.
    Train(TrainArgs),
    /// Roll out a trained policy on one map.
    Eval(EvalArgs),
    /// Per-cell deception metric of a map as CSV and SVG.
    Heatmap(HeatmapArgs),
    /// Run a trained policy through a continuous forest.
    Forest(ForestArgs),
    /// Exhaustive best path on a small map.
    Oracle(OracleArgs),
    /// Write the built-in maps and optional random maps to disk.
    GenMaps(GenMapsArgs),
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Directory of training maps (*.txt); defaults to the built-in 8x8 set.
    #[arg(long)]
    pub maps: Option<PathBuf>,
    /// Directory of validation maps; defaults to the built-in 8x8 validation set.
    #[arg(long)]
    pub validation: Option<PathBuf>,
    /// exaggeration or ambiguity; overrides the config file.
    #[arg(long)]
    pub mode: Option<String>,
    /// Overrides train.total_episodes.
    #[arg(long)]
    pub episodes: Option<usize>,
    #[arg(long)]
    pub workers: Option<usize>,
    /// Continue from a checkpoint written by an earlier run.
    #[arg(long)]
    pub resume: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TaskArgs {
    /// Map file; S, G and D markers supply defaults for the cells below.
    #[arg(long)]
    pub map: PathBuf,
    /// Start cell as row,col.
    #[arg(long)]
    pub start: Option<String>,
    /// True goal cell as row,col.
    #[arg(long)]
    pub goal: Option<String>,
    /// Decoy cell as row,col.
    #[arg(long)]
    pub decoy: Option<String>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[command(flatten)]
    pub task: TaskArgs,
    /// Budget beyond the shortest distance.
    #[arg(long, default_value_t = 0.0)]
    pub extra_steps: f64,
    /// Number of rollouts.
    #[arg(short = 'n', long, default_value_t = 32)]
    pub episodes: usize,
    /// Pick the most likely edge instead of sampling.
    #[arg(long)]
    pub greedy: bool,
    #[arg(long)]
    pub mode: Option<String>,
}

#[derive(Debug, Args)]
pub struct HeatmapArgs {
    #[command(flatten)]
    pub task: TaskArgs,
    /// classical_ambiguity, proposed_ambiguity or exaggeration.
    #[arg(long, default_value = "proposed_ambiguity")]
    pub metric: String,
}

#[derive(Debug, Args)]
pub struct ForestArgs {
    /// Forest world JSON.
    #[arg(long, conflicts_with = "generate")]
    pub world: Option<PathBuf>,
    /// Generate a forest from this seed instead of loading one.
    #[arg(long)]
    pub generate: Option<u64>,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, default_value_t = 15.0)]
    pub extra_distance: f64,
    /// Perception radius in multiples of the mean tree separation.
    #[arg(long)]
    pub visibility: Option<f64>,
    /// Step at which the decoy is replaced by --plan-b.
    #[arg(long, requires = "plan_b")]
    pub t_switch: Option<usize>,
    /// Replacement decoy as x,y.
    #[arg(long, requires = "t_switch")]
    pub plan_b: Option<String>,
    /// Sample edges instead of taking the most likely one.
    #[arg(long)]
    pub sample: bool,
    /// Draw the global Voronoi graph under the path.
    #[arg(long)]
    pub show_edges: bool,
}

#[derive(Debug, Args)]
pub struct OracleArgs {
    #[command(flatten)]
    pub task: TaskArgs,
    #[arg(long)]
    pub t_max: f64,
    #[arg(long, default_value = "exaggeration")]
    pub mode: String,
}

#[derive(Debug, Args)]
pub struct GenMapsArgs {
    /// Number of random obstacle maps to add.
    #[arg(long, default_value_t = 0)]
    pub random: usize,
    /// Side length of the random maps.
    #[arg(long, default_value_t = 32)]
    pub size: usize,
    /// Fraction of cells turned into walls.
    #[arg(long, default_value_t = 0.2)]
    pub obstacles: f64,
}

/// Bad command-line input detected after argument parsing.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.downcast_ref::<UsageError>().is_some() {
            return 2;
        }
        if let Some(e) = cause.downcast_ref::<dpp_core::Error>() {
            return match e.category() {
                ErrorCategory::Usage => 2,
                ErrorCategory::Data => 3,
                ErrorCategory::Numeric => 4,
            };
        }
    }
    3
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
