mod commands;
mod serve;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

/// Multi-skill quadruped locomotion: expert training, gating, gait-switch
/// search, velocity estimation, evaluation and live steering.
#[derive(Debug, Parser)]
#[command(name = "quadmix", version)]
pub struct Cli {
    /// TOML run configuration; defaults are used for anything omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Overrides the configured output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum TaskArg {
    Recovery,
    Trot,
    Pace,
    Bound,
    Gallop,
    /// Orientation and height only, from a standing start.
    Stand,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum EvalMode {
    Composite,
    ManualSwitch,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum DriveMode {
    Composite,
    ManualSwitch,
    /// Hold the nominal pose; needs no trained weights.
    Hold,
}

#[derive(Debug, Args)]
pub struct CriteriaArgs {
    /// Trot-to-bound switch distance in metres.
    #[arg(long)]
    pub x1: Option<f64>,
    /// Bound-to-gallop switch distance in metres.
    #[arg(long)]
    pub x2: Option<f64>,
}

#[derive(Debug, Args)]
pub struct BundleArg {
    /// Expert bundle directory; defaults to `<out>/experts`.
    #[arg(long)]
    pub bundle: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train one single-skill expert and store it in the bundle.
    TrainExpert {
        #[arg(long, value_enum)]
        task: TaskArg,
        #[arg(long)]
        epochs: Option<usize>,
        #[command(flatten)]
        bundle: BundleArg,
    },
    /// Train the gating network over a complete expert bundle.
    TrainGating {
        #[arg(long)]
        epochs: Option<usize>,
        #[command(flatten)]
        bundle: BundleArg,
        #[command(flatten)]
        criteria: CriteriaArgs,
    },
    /// Interleave gating training with CMA-ES over the switch criteria.
    OptimizeCriteria {
        #[arg(long)]
        generations: Option<usize>,
        #[arg(long)]
        epochs_per_generation: Option<usize>,
        #[command(flatten)]
        bundle: BundleArg,
    },
    /// Collect stand/trot data and fit the velocity estimator.
    TrainEstimator {
        #[arg(long)]
        episodes: Option<usize>,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Goal-reaching episodes with the composite policy or hard switching.
    Evaluate {
        #[arg(long, value_enum)]
        mode: EvalMode,
        #[arg(long, default_value_t = 10)]
        episodes: usize,
        #[command(flatten)]
        bundle: BundleArg,
        #[command(flatten)]
        criteria: CriteriaArgs,
        /// Feed the policy estimated velocity from this checkpoint.
        #[arg(long)]
        estimator: Option<PathBuf>,
    },
    /// Live steering session over a websocket at `/ws`.
    Serve {
        #[arg(long, default_value_t = 8765)]
        port: u16,
        #[arg(long, value_enum, default_value_t = DriveMode::Composite)]
        mode: DriveMode,
        #[command(flatten)]
        bundle: BundleArg,
        #[command(flatten)]
        criteria: CriteriaArgs,
        #[arg(long)]
        estimator: Option<PathBuf>,
        /// Static files (the steering UI) served at `/`.
        #[arg(long)]
        assets: Option<PathBuf>,
        /// Append every telemetry frame to this JSON-lines file.
        #[arg(long)]
        log: Option<PathBuf>,
        /// Sample actions instead of using distribution means.
        #[arg(long)]
        stochastic: bool,
    },
    /// Run episodes and write their JSON-lines trajectory.
    Export {
        /// Output file.
        #[arg(long)]
        trajectory: PathBuf,
        #[arg(long, value_enum, default_value_t = DriveMode::Composite)]
        mode: DriveMode,
        #[arg(long, default_value_t = 1)]
        episodes: usize,
        /// Goal in metres, world frame, as `x,y`; random per episode if omitted.
        #[arg(long, value_parser = parse_pair, allow_hyphen_values = true)]
        goal: Option<[f64; 2]>,
        #[command(flatten)]
        bundle: BundleArg,
        #[command(flatten)]
        criteria: CriteriaArgs,
        #[arg(long)]
        estimator: Option<PathBuf>,
    },
    /// Print the effective configuration as TOML.
    ShowConfig,
}

fn parse_pair(s: &str) -> Result<[f64; 2], String> {
    let parts: Vec<&str> = s.split(',').collect();
    let [a, b] = parts.as_slice() else {
        return Err(format!("expected `x,y`, got `{s}`"));
    };
    let p = |t: &str| t.trim().parse::<f64>().map_err(|e| format!("`{t}`: {e}"));
    Ok([p(a)?, p(b)?])
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_writer(std::io::stderr)
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()))
        .init();
    let cli = Cli::parse();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
