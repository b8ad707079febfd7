mod commands;
mod settings;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

/// Selective text style transfer: training, stylization and dataset augmentation.
#[derive(Debug, Parser)]
#[command(name = "textstyle", version)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

/// Flags shared by every command; each overrides the config key of the same name.
#[derive(Debug, Args, Clone, Default)]
pub struct Common {
    /// INI file of settings
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Network checkpoint manifest (JSON)
    #[arg(long, global = true)]
    checkpoint: Option<PathBuf>,
    /// Output file or directory
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train a multi-style transformation network
    TrainStyle(commands::TrainStyleArgs),
    /// Distill a teacher network into a text-selective student
    TrainDistill(commands::TrainDistillArgs),
    /// Stylize one image, optionally only inside its text regions
    Stylize(commands::StylizeArgs),
    /// Blend a content and a stylized image through a probability map
    Blend(commands::BlendArgs),
    /// Write an augmented copy of an annotated dataset
    Augment(commands::AugmentArgs),
    /// Check analytic gradients against finite differences
    Gradcheck(commands::GradcheckArgs),
}

#[derive(Debug)]
pub enum CliError {
    /// Bad flags, flag combinations or config values.
    Usage(String),
    Failure(anyhow::Error),
}

impl From<anyhow::Error> for CliError {
    fn from(e: anyhow::Error) -> Self {
        CliError::Failure(e)
    }
}

impl From<textstyle::Error> for CliError {
    fn from(e: textstyle::Error) -> Self {
        CliError::Failure(e.into())
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::TrainStyle(a) => commands::train_style(&cli.common, a),
        Command::TrainDistill(a) => commands::train_distill(&cli.common, a),
        Command::Stylize(a) => commands::stylize(&cli.common, a),
        Command::Blend(a) => commands::blend(&cli.common, a),
        Command::Augment(a) => commands::augment(&cli.common, a),
        Command::Gradcheck(a) => commands::gradcheck(&cli.common, a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(CliError::Failure(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
