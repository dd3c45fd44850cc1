//! `hetsr` — train, apply, evaluate, and price heterogeneous-kernel SR networks.

mod commands;
mod config;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::Overrides;

#[derive(Parser, Debug)]
#[command(name = "hetsr", version, about = "Heterogeneous-kernel super-resolution GAN engine")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone, Default)]
struct Common {
    /// TOML run configuration.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Seed for initialisation, shuffling, and patch sampling.
    #[arg(long, value_name = "N")]
    seed: Option<u64>,
    /// Compute in 64-bit floating point.
    #[arg(long = "f64")]
    f64: bool,
    /// Output directory.
    #[arg(long, value_name = "DIR")]
    output: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train generator and critic; writes metrics.csv, samples, and checkpoints.
    Train {
        #[command(flatten)]
        common: Common,
        /// Number of generator updates.
        #[arg(long, value_name = "N")]
        iterations: Option<u64>,
        /// Image directory (overrides `dataset.root`).
        #[arg(long, value_name = "DIR")]
        dataset: Option<PathBuf>,
    },
    /// Upscale one PNG ×4 with a trained generator.
    Sr {
        #[command(flatten)]
        common: Common,
        /// Checkpoint directory (default: `<output>/checkpoint`).
        #[arg(long, value_name = "DIR")]
        checkpoint: Option<PathBuf>,
        /// High-resolution reference; prints PSNR/SSIM of the result against it.
        #[arg(long, value_name = "PATH")]
        reference: Option<PathBuf>,
        input: PathBuf,
        output_png: PathBuf,
    },
    /// Per-image and average PSNR/SSIM on a dataset, with bicubic baseline.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_name = "DIR")]
        checkpoint: Option<PathBuf>,
        /// Image directory (overrides `dataset.root`).
        #[arg(long, value_name = "DIR")]
        dataset: Option<PathBuf>,
    },
    /// Parameter and multiply-accumulate report against standard convolutions.
    Analyze {
        #[command(flatten)]
        common: Common,
        /// LR input extent `HxW` used for MAC counts.
        #[arg(long, value_name = "HxW", default_value = "24x24")]
        input: String,
    },
}

/// An error with the process exit code it maps to.
#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    pub fn usage(message: impl Into<String>) -> Self {
        Self {
            code: 2,
            message: message.into(),
        }
    }

    pub fn runtime(message: impl Into<String>) -> Self {
        Self {
            code: 1,
            message: message.into(),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<hetsr::Error> for CliError {
    fn from(e: hetsr::Error) -> Self {
        use hetsr::Error as E;
        match e {
            E::InvalidConfig(_) | E::InvalidSpec(_) | E::EmptyDataset(_) => CliError::usage(e.to_string()),
            _ => CliError::runtime(e.to_string()),
        }
    }
}

fn configure_threads() -> Result<(), CliError> {
    let Ok(raw) = std::env::var("HETSR_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::usage(format!("HETSR_THREADS must be a positive integer, got {raw:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::runtime(format!("cannot configure thread pool: {e}")))
}

fn overrides(common: &Common) -> Overrides {
    Overrides {
        seed: common.seed,
        f64: common.f64,
        output: common.output.clone(),
        ..Overrides::default()
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    configure_threads()?;
    match cli.command {
        Command::Train {
            common,
            iterations,
            dataset,
        } => {
            let o = Overrides {
                iterations,
                dataset,
                ..overrides(&common)
            };
            commands::train(&config::RunConfig::load(common.config.as_deref(), &o)?)
        }
        Command::Sr {
            common,
            checkpoint,
            reference,
            input,
            output_png,
        } => {
            let o = Overrides {
                checkpoint,
                ..overrides(&common)
            };
            let cfg = config::RunConfig::load(common.config.as_deref(), &o)?;
            commands::sr(&cfg, &input, &output_png, reference.as_deref())
        }
        Command::Eval {
            common,
            checkpoint,
            dataset,
        } => {
            let o = Overrides {
                checkpoint,
                dataset,
                ..overrides(&common)
            };
            commands::eval(&config::RunConfig::load(common.config.as_deref(), &o)?)
        }
        Command::Analyze { common, input } => {
            let cfg = config::RunConfig::load(common.config.as_deref(), &overrides(&common))?;
            let (h, w) = commands::parse_extent(&input)?;
            commands::analyze(&cfg, h, w, common.output.is_some())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code)
        }
    }
}
