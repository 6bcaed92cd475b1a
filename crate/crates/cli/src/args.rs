use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(
    name = "cdpr",
    version,
    about = "Train, evaluate and compare controllers for a four-cable parallel robot"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a policy and write it with its metrics CSV.
    Train(TrainArgs),
    /// Track reference trajectories, or roll out reach episodes.
    Eval(EvalArgs),
    /// Compare controllers across control intervals.
    Sweep(SweepArgs),
    /// Grid-search PID gains for one trajectory and interval.
    TunePid(TuneArgs),
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    /// Configuration file of `section.key = value` lines.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override one configuration key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// trpo, ppo or ddpg.
    #[arg(long)]
    pub algo: Option<String>,
    /// continuous or discrete.
    #[arg(long)]
    pub action_mode: Option<String>,
    /// Environment steps.
    #[arg(long)]
    pub budget: Option<usize>,
    /// Policy file to write.
    #[arg(long)]
    pub out: PathBuf,
    /// Metrics CSV; defaults to the policy path with a `.metrics.csv` suffix.
    #[arg(long)]
    pub metrics: Option<PathBuf>,
    /// Continue training from this policy file.
    #[arg(long)]
    pub init: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Policy file to evaluate.
    #[arg(long, conflicts_with_all = ["controller", "controllers"])]
    pub policy: Option<PathBuf>,
    /// Built-in controller; only `pid` exists.
    #[arg(long, conflicts_with = "controllers")]
    pub controller: Option<String>,
    /// `auto` (grid search per trajectory and interval), `config`, or `kp:ki:kd`.
    #[arg(long, default_value = "auto")]
    pub gains: String,
    /// Comma list of `pid` and `label:policy-file` entries.
    #[arg(long)]
    pub controllers: Option<String>,
    /// Comma list of circle, spiral1, spiral2, or `all`.
    #[arg(long, default_value = "circle")]
    pub trajectory: String,
    #[arg(long)]
    pub dt: Option<f64>,
    /// Per-step tracking CSV (single controller and trajectory only).
    #[arg(long)]
    pub csv: Option<PathBuf>,
    /// Summary CSV with one row per trajectory and one column per controller.
    #[arg(long)]
    pub summary: Option<PathBuf>,
    /// Roll out this many reach episodes instead of tracking.
    #[arg(long)]
    pub episodes: Option<usize>,
    /// Take the most likely action during episode rollouts.
    #[arg(long)]
    pub deterministic: bool,
}

#[derive(Debug, Clone, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Comma list of `pid` and `label:policy-file` entries.
    #[arg(long, default_value = "pid")]
    pub controllers: String,
    /// Comma list of control intervals; defaults to `sweep.dt`.
    #[arg(long)]
    pub dt: Option<String>,
    #[arg(long, default_value = "circle")]
    pub trajectory: String,
    /// Comparison table CSV.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct TuneArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long, default_value = "circle")]
    pub trajectory: String,
    #[arg(long)]
    pub dt: Option<f64>,
    /// Write the chosen gains as configuration lines.
    #[arg(long)]
    pub out: Option<PathBuf>,
}
