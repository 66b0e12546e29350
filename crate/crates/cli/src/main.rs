//! `resid-rl`: generate data, fit models, solve fixed points, train and evaluate agents.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

mod commands;
mod config;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Runtime(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Runtime(m) => write!(f, "error: {m}"),
        }
    }
}

impl From<resid_rl::Error> for CliError {
    fn from(e: resid_rl::Error) -> Self {
        use resid_rl::Error as E;
        match e {
            E::InvalidConfig(_) | E::Format { .. } | E::DimensionMismatch { .. } => CliError::Usage(e.to_string()),
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "resid-rl",
    version,
    about = "Residual-based offline reinforcement learning toolkit"
)]
pub struct Cli {
    /// Worker threads for parallel sections (default: all cores).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// TOML run configuration; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Base seed (falls back to the config file, then RESID_RL_SEED, then 0).
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output file or directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct EnvArgs {
    /// synthetic1d or cartpole.
    #[arg(long)]
    pub env: Option<String>,
    /// Transition noise standard deviation.
    #[arg(long)]
    pub noise_std: Option<f64>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum KindArg {
    Linear,
    Mlp,
}

#[derive(Debug, Clone, Args)]
pub struct RegressionArgs {
    /// Regression model for the transition mean.
    #[arg(long, value_enum)]
    pub regression: Option<KindArg>,
    #[arg(long)]
    pub regression_epochs: Option<usize>,
    #[arg(long)]
    pub regression_hidden: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct DqnArgs {
    #[arg(long)]
    pub episodes: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub target_sync: Option<usize>,
    #[arg(long)]
    pub horizon_cap: Option<usize>,
    /// Comma-separated hidden layer widths.
    #[arg(long, value_delimiter = ',')]
    pub hidden: Option<Vec<usize>>,
    #[arg(long)]
    pub eval_every: Option<usize>,
    #[arg(long)]
    pub eval_episodes: Option<usize>,
    #[arg(long)]
    pub final_eval_episodes: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, serde::Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum OperatorArg {
    Residual,
    FullInformation,
    True,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Log uniform-random trajectories into a JSONL dataset.
    GenData {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        env: EnvArgs,
        #[arg(long)]
        trajectories: Option<usize>,
        /// Step cap per trajectory.
        #[arg(long)]
        horizon: Option<usize>,
    },
    /// Fit the transition-mean regression and write the model and its residuals.
    FitModel {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: Option<PathBuf>,
        #[command(flatten)]
        regression: RegressionArgs,
    },
    /// Solve a fixed point on a grid and write Q and V as CSV.
    Solve {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        env: EnvArgs,
        #[arg(long, value_enum)]
        operator: Option<OperatorArg>,
        /// Nodes per state dimension.
        #[arg(long)]
        grid: Option<usize>,
        #[arg(long)]
        tol: Option<f64>,
        #[arg(long)]
        max_iter: Option<usize>,
        #[arg(long)]
        quadrature_nodes: Option<usize>,
        /// Dataset for the residual operators; generated from the seed when absent.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        trajectories: Option<usize>,
        #[arg(long)]
        horizon: Option<usize>,
        /// Pre-fitted regression model; fitted from the data when absent.
        #[arg(long)]
        model: Option<PathBuf>,
        #[command(flatten)]
        regression: RegressionArgs,
    },
    /// Train a Q-network in the residual simulator.
    Train(TrainArgs),
    /// Train a Q-network in the point-prediction simulator (no residuals).
    TrainBaseline(TrainArgs),
    /// Roll out a saved Q-network (or a random policy) in the true environment.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        env: EnvArgs,
        #[arg(long)]
        model: Option<PathBuf>,
        /// Evaluate the uniform random policy instead of a model.
        #[arg(long)]
        random: bool,
        #[arg(long)]
        episodes: Option<usize>,
        #[arg(long)]
        horizon_cap: Option<usize>,
    },
    /// Residual trainer over several dataset sizes and seeds.
    Sweep(SweepArgs),
    /// Residual trainer against the no-residual baseline.
    CompareModels(SweepArgs),
    /// Run a property suite and report each check.
    Verify {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "theory")]
        suite: String,
        #[arg(long, default_value = "synthetic1d")]
        env: String,
    },
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Defaults to the environment recorded with the dataset.
    #[command(flatten)]
    pub env: EnvArgs,
    #[command(flatten)]
    pub dqn: DqnArgs,
    #[command(flatten)]
    pub regression: RegressionArgs,
}

#[derive(Debug, Clone, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub env: EnvArgs,
    /// Comma-separated trajectory counts.
    #[arg(long, value_delimiter = ',')]
    pub n: Option<Vec<usize>>,
    /// Comma-separated seeds.
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
    #[arg(long)]
    pub data_horizon: Option<usize>,
    #[command(flatten)]
    pub dqn: DqnArgs,
    #[command(flatten)]
    pub regression: RegressionArgs,
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(j) = cli.jobs {
        if j == 0 {
            return Err(CliError::Usage("--jobs must be >= 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(j)
            .build_global()
            .map_err(|e| CliError::Runtime(e.to_string()))?;
    }
    commands::dispatch(cli.command)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.code())
        }
    }
}
