//! `affekt`: runs the EEG affect pipeline stage by stage over a work
//! directory.

mod error;
mod stages;
mod winfile;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use affekt_core::pipeline::PipelineConfig;
use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::Serialize;

use error::CliError;

#[derive(Parser)]
#[command(name = "affekt", version, about = "EEG affect recognition pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Pipeline configuration (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Replaces the seed in the configuration.
    #[arg(long)]
    seed: Option<u64>,
    /// Replaces the work directory in the configuration.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic BIDS-like cohort under <work>/raw.
    Synth(Common),
    /// Notch filter, standardize and cut event windows.
    Preprocess(Common),
    /// Add bounded Gaussian noise to every preprocessed window.
    Augment(Common),
    /// Multiscale entropy of clean versus noisy windows.
    Entropy(Common),
    /// PSD feature images, split assignment and SMOTE on the training part.
    Featurize(Common),
    /// Train the binary and categorical models.
    Train(Common),
    /// Evaluate both models on the test split.
    Eval(Common),
    /// Classify a recording window by window and log interventions.
    Stream(Common),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Synth(_) => "synth",
            Command::Preprocess(_) => "preprocess",
            Command::Augment(_) => "augment",
            Command::Entropy(_) => "entropy",
            Command::Featurize(_) => "featurize",
            Command::Train(_) => "train",
            Command::Eval(_) => "eval",
            Command::Stream(_) => "stream",
        }
    }
}

fn load_config(common: &Common) -> Result<PipelineConfig, CliError> {
    let mut cfg = PipelineConfig::load(&common.config)?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &common.out {
        cfg.paths.work_dir = out.clone();
    }
    Ok(cfg)
}

pub(crate) fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::missing(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::bad_input(format!("{}: {e}", path.display())))
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).expect("report serializes");
    text.push('\n');
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

pub(crate) fn ensure_dir(path: &Path) -> Result<(), CliError> {
    fs::create_dir_all(path).map_err(|e| CliError::io(path, e))
}

fn run(cli: Cli) -> Result<serde_json::Value, CliError> {
    match cli.command {
        Command::Synth(c) => stages::synth(&load_config(&c)?),
        Command::Preprocess(c) => stages::preprocess(&load_config(&c)?),
        Command::Augment(c) => stages::augment(&load_config(&c)?),
        Command::Entropy(c) => stages::entropy(&load_config(&c)?),
        Command::Featurize(c) => stages::featurize(&load_config(&c)?),
        Command::Train(c) => stages::train(&load_config(&c)?),
        Command::Eval(c) => stages::eval(&load_config(&c)?),
        Command::Stream(c) => stages::stream(&load_config(&c)?),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => e.exit(),
        Err(e) => {
            let err = CliError {
                kind: "usage",
                message: e.to_string().trim().to_string(),
                code: error::EXIT_USAGE,
            };
            eprintln!("{}", err.to_json());
            return ExitCode::from(err.code as u8);
        }
    };
    let stage = cli.command.name();
    let started = Instant::now();
    match run(cli) {
        Ok(report) => {
            log::info!("{stage} finished in {:.1}s", started.elapsed().as_secs_f64());
            println!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::from(e.code as u8)
        }
    }
}
