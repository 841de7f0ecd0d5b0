//! `envtrack`: synthetic data, preprocessing, training, evaluation, and
//! statistics for EEG/envelope match-mismatch classification.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use envtrack::synthgen::{SnrDb, SynthMode};
use envtrack::training::Scenario;

#[derive(Parser, Debug)]
#[command(name = "envtrack", version, about = "EEG / speech-envelope match-mismatch toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Synthetic subjects.
    Synth {
        #[command(subcommand)]
        action: SynthAction,
    },
    /// Raw recordings to 64 Hz normalized recordings.
    Prep {
        #[command(subcommand)]
        action: PrepAction,
    },
    /// Train a model in one of the SD, SI, TL scenarios.
    Train(TrainArgs),
    /// Per-subject accuracy of a trained model.
    Eval(EvalArgs),
    /// Linear decoder baseline.
    Baseline {
        #[command(subcommand)]
        action: BaselineAction,
    },
    /// Compare two per-subject reports.
    Stats {
        #[command(subcommand)]
        action: StatsAction,
    },
}

#[derive(Subcommand, Debug)]
enum SynthAction {
    Gen(SynthGenArgs),
}

#[derive(clap::Args, Debug)]
pub struct SynthGenArgs {
    #[arg(long)]
    subjects: Option<usize>,
    #[arg(long)]
    minutes: Option<f64>,
    #[arg(long)]
    mode: Option<SynthMode>,
    /// Decibels, or `inf` for no noise.
    #[arg(long, allow_hyphen_values = true)]
    snr_db: Option<SnrDb>,
    #[arg(long)]
    seed: Option<u64>,
    /// Mark the last N subjects as held out of pooled training.
    #[arg(long)]
    holdout: Option<usize>,
    #[arg(long)]
    channels: Option<usize>,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand, Debug)]
enum PrepAction {
    Run(PrepArgs),
}

#[derive(clap::Args, Debug)]
pub struct PrepArgs {
    /// Dataset directory of raw recordings.
    #[arg(long)]
    data: PathBuf,
    /// Directory of `<recording_id>.wav` stimuli; otherwise the recordings'
    /// own envelope channel is used.
    #[arg(long)]
    stimuli: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(clap::Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    scenario: Scenario,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Subject-independent weights to fine-tune (required for tl).
    #[arg(long, required_if_eq("scenario", "tl"))]
    init: Option<PathBuf>,
    /// Subject to train on (sd, tl) when the dataset holds several.
    #[arg(long)]
    subject: Option<String>,
}

#[derive(clap::Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "test")]
    split: String,
    #[arg(long, default_value_t = 10.0)]
    window_s: f64,
    #[arg(long)]
    report: PathBuf,
}

#[derive(Subcommand, Debug)]
enum BaselineAction {
    Linear(BaselineArgs),
}

#[derive(clap::Args, Debug)]
pub struct BaselineArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "test")]
    split: String,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    report: PathBuf,
}

#[derive(Subcommand, Debug)]
enum StatsAction {
    Compare(CompareArgs),
}

#[derive(clap::Args, Debug)]
pub struct CompareArgs {
    #[arg(long)]
    a: PathBuf,
    #[arg(long)]
    b: PathBuf,
    /// Comparison JSON destination; standard output when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn init_threads() -> Result<()> {
    let Ok(v) = std::env::var("ENVTRACK_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .with_context(|| format!("ENVTRACK_THREADS must be a positive integer, got '{v}'"))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .context("configuring the thread pool")
}

fn run(cli: Cli) -> Result<()> {
    init_threads()?;
    match cli.command {
        Command::Synth {
            action: SynthAction::Gen(a),
        } => commands::synth_gen(a),
        Command::Prep {
            action: PrepAction::Run(a),
        } => commands::prep_run(a),
        Command::Train(a) => commands::train(a),
        Command::Eval(a) => commands::eval(a),
        Command::Baseline {
            action: BaselineAction::Linear(a),
        } => commands::baseline_linear(a),
        Command::Stats {
            action: StatsAction::Compare(a),
        } => commands::stats_compare(a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
