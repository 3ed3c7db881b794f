//! `classpulse`: dataset generation, training, evaluation, simulation,
//! replay, serving and MDP analysis from the command line.
//!
//! Every failure ends the process with a single `error: <kind>: <message>`
//! line on stderr and a nonzero exit status.

mod commands;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use error::CliError;

#[derive(Debug, Parser)]
#[command(name = "classpulse", version, about = "Affect-aware classroom feedback tools")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic heterogeneous dataset and its ground truth.
    GenData(GenDataArgs),
    /// Train the valence/arousal regressor on a dataset.
    Train(TrainArgs),
    /// Evaluate a trained model against ground truth.
    Eval(EvalArgs),
    /// Run a closed-loop classroom simulation.
    Simulate(SimulateArgs),
    /// Replay a recorded sample file into a live session.
    Replay(ReplayArgs),
    /// Run the HTTP service.
    Serve(ServeArgs),
    /// Solve the teaching MDP and analyse its Markov chains.
    MdpAnalyze(MdpAnalyzeArgs),
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    #[arg(long, default_value_t = 10)]
    pub users: usize,
    /// Rows per user.
    #[arg(long, default_value_t = 200)]
    pub rows: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub truth: PathBuf,
    /// Population preset JSON; the shipped population when omitted.
    #[arg(long)]
    pub population: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Calibration {
    /// Min-max per user.
    PerUser,
    /// A single min-max over all users.
    Global,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Box constraint; searched over {1, 10} when omitted.
    #[arg(long)]
    pub c: Option<f64>,
    #[arg(long, default_value_t = 0.1)]
    pub epsilon: f64,
    /// Gaussian kernel scale; searched around the fine default when omitted.
    #[arg(long)]
    pub kernel_scale: Option<f64>,
    /// Train:validation:test ratios.
    #[arg(long, default_value = "70:15:15")]
    pub split: String,
    /// Seed for the train/validation/test shuffle.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = Calibration::PerUser)]
    pub calibration: Calibration,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Baseline {
    Knn,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub truth: PathBuf,
    /// Confusion matrix CSV: true-label rows, predicted columns, proportions.
    #[arg(long)]
    pub confusion: PathBuf,
    #[arg(long, value_enum)]
    pub baseline: Option<Baseline>,
    /// Neighbours for the kNN baseline.
    #[arg(long, default_value_t = 5)]
    pub knn_k: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Switch {
    On,
    Off,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long, default_value_t = 10)]
    pub students: usize,
    #[arg(long, default_value_t = 30.0)]
    pub minutes: f64,
    #[arg(long, value_enum, default_value_t = Switch::On)]
    pub controller: Switch,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Dynamics preset name or JSON file.
    #[arg(long, default_value = "decay_to_bored")]
    pub preset: String,
    /// Report JSON; printed to stdout when omitted.
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Use this model instead of training one from the seed.
    #[arg(long)]
    pub model: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReplayArgs {
    #[arg(long)]
    pub file: PathBuf,
    /// Playback speed factor; 0 sends as fast as possible.
    #[arg(long, default_value_t = 1.0)]
    pub speed: f64,
    /// Session URL, e.g. http://127.0.0.1:8080/sessions/s1
    #[arg(long)]
    pub session: String,
    /// Bearer token; falls back to CLASSPULSE_TOKEN.
    #[arg(long)]
    pub token: Option<String>,
    /// Upper bound on samples per request.
    #[arg(long, default_value_t = 500)]
    pub batch: usize,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,
    #[arg(long)]
    pub storage: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
    /// MDP configuration JSON; the shipped configuration when omitted.
    #[arg(long)]
    pub mdp_config: Option<PathBuf>,
    /// Bearer token required on every request; falls back to CLASSPULSE_TOKEN.
    #[arg(long)]
    pub token: Option<String>,
}

#[derive(Debug, Args)]
pub struct MdpAnalyzeArgs {
    /// MDP configuration JSON; the shipped configuration when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub report: Option<PathBuf>,
}

fn parse_cli() -> Result<Cli, CliError> {
    Cli::try_parse().map_err(|e| {
        use clap::error::ErrorKind;
        if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion)
            || e.kind() == ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand
        {
            let _ = e.print();
            std::process::exit(if e.kind() == ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand { 2 } else { 0 });
        }
        let text = e.to_string();
        let first = text.lines().next().unwrap_or_default();
        CliError::usage(first.strip_prefix("error: ").unwrap_or(first))
    })
}

fn main() -> ExitCode {
    let result = parse_cli().and_then(|cli| match cli.command {
        Command::GenData(a) => commands::gen_data(&a),
        Command::Train(a) => commands::train(&a),
        Command::Eval(a) => commands::eval(&a),
        Command::Simulate(a) => commands::simulate(&a),
        Command::Replay(a) => commands::replay(&a),
        Command::Serve(a) => commands::serve(&a),
        Command::MdpAnalyze(a) => commands::mdp_analyze(&a),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
