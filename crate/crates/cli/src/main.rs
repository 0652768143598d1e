//! `brace`: command-line front door for training, evaluation, theory checks,
//! data generation, calibration, the live session host and figure series.

mod commands;
mod manifest;

use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;
use thiserror::Error;

#[derive(Debug, Parser)]
#[command(name = "brace", version, about = "Belief-conditioned shared-control toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train a policy (and, end to end, the inference parameters).
    Train(TrainArgs),
    /// Run paired evaluation episodes and write aggregate and per-episode results.
    Eval(EvalArgs),
    /// Check monotonicity of the optimal blend and MAP regret dominance numerically.
    VerifyTheorems(VerifyArgs),
    /// Generate labeled unassisted pilot trajectories.
    GenData(GenDataArgs),
    /// Fit inference parameters to a labeled dataset.
    Calibrate(CalibrateArgs),
    /// Host live sessions over a websocket.
    Serve(ServeArgs),
    /// Emit figure-ready series: learning curves and gamma heatmaps.
    Plotdata(PlotArgs),
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// TOML training config; defaults apply when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Policy checkpoint, required by brace, uniform_prior and map_sequential.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// TOML evaluation config (env, pilot, expert, rewards sections).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Comma-separated: no_assist, fixed_gamma:<g>, expert_<mode>, brace,
    /// uniform_prior, map_sequential.
    #[arg(long, default_value = "no_assist,brace")]
    pub conditions: String,
    /// First episode seed; episodes use consecutive seeds.
    #[arg(long, default_value_t = 10_000)]
    pub seeds: u64,
    #[arg(long, default_value_t = 300)]
    pub episodes: usize,
    /// Comma-separated stages cycled over the episodes.
    #[arg(long, default_value = "2,3,4,5")]
    pub stages: String,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    /// Random quadratic families for the regret check.
    #[arg(long, default_value_t = 1000)]
    pub samples: usize,
    /// Random quadratic families added to the monotonicity sweeps.
    #[arg(long, default_value_t = 20)]
    pub families: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long, default_value = "theory_out")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    /// TOML config with optional env and pilot sections.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value_t = 100)]
    pub trajectories: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    /// Dataset written by gen-data.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    /// TOML session config.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub addr: String,
    /// Directory for the manifest and trial records.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PlotArgs {
    /// Training log to turn into a learning curve.
    #[arg(long)]
    pub log: Option<PathBuf>,
    #[arg(long, default_value_t = 100)]
    pub window: usize,
    /// Checkpoint to roll out for the gamma heatmap and trajectory.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, default_value_t = 50)]
    pub episodes: usize,
    #[arg(long, default_value_t = 20_000)]
    pub seed: u64,
    #[arg(long, default_value_t = 5)]
    pub stage: u8,
    /// Heatmap cell size in workspace units.
    #[arg(long, default_value_t = 25.0)]
    pub cell: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{path}:{line}: {message}")]
    Config { path: String, line: usize, message: String },
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Verification(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Train(#[from] brace_core::train::TrainError),
    #[error(transparent)]
    Eval(#[from] brace_core::eval::EvalError),
    #[error(transparent)]
    Theory(#[from] brace_core::theory::TheoryError),
    #[error(transparent)]
    Belief(#[from] brace_core::belief::BeliefError),
    #[error(transparent)]
    Pilot(#[from] brace_core::pilot::PilotError),
    #[error(transparent)]
    Env(#[from] brace_core::env::EnvError),
    #[error(transparent)]
    Neural(#[from] brace_core::neural::NeuralError),
    #[error(transparent)]
    Episode(#[from] brace_core::episode::EpisodeError),
    #[error(transparent)]
    Session(#[from] brace_session::SessionError),
}

impl CliError {
    fn kind(&self) -> &'static str {
        match self {
            CliError::Config { .. } => "config",
            CliError::Usage(_) => "usage",
            CliError::Verification(_) => "verification",
            CliError::Io(_) => "io",
            CliError::Json(_) => "json",
            CliError::Train(_) => "train",
            CliError::Eval(_) => "eval",
            CliError::Theory(_) => "theory",
            CliError::Belief(_) => "belief",
            CliError::Pilot(_) => "pilot",
            CliError::Env(_) => "env",
            CliError::Neural(_) => "checkpoint",
            CliError::Episode(_) => "episode",
            CliError::Session(_) => "session",
        }
    }

    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config { .. } => 3,
            CliError::Usage(_) => 2,
            _ => 1,
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(a) => commands::train(&a),
        Command::Eval(a) => commands::eval(&a),
        Command::VerifyTheorems(a) => commands::verify_theorems(&a),
        Command::GenData(a) => commands::gen_data(&a),
        Command::Calibrate(a) => commands::calibrate(&a),
        Command::Serve(a) => commands::serve(&a),
        Command::Plotdata(a) => commands::plotdata(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let message = e.to_string().replace(['\n', '\r'], " ");
            eprintln!("error[{}]: {}", e.kind(), message.trim());
            ExitCode::from(e.exit_code())
        }
    }
}
