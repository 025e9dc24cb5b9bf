use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use unionnet_cli::{cmd_eval, cmd_inspect, cmd_kfold, cmd_train, CliError, Overrides};

#[derive(Parser)]
#[command(
    name = "unionnet",
    version,
    about = "Train, evaluate and inspect Union-net image classifiers"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model from a config file (or continue from a checkpoint).
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Continue the run stored in this checkpoint.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Dataset directory, overriding `data_dir`.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Seed, overriding `seed`.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Evaluate a checkpoint and print per-class metrics.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: Option<PathBuf>,
        /// Rebuild this config's test split instead of using the whole dataset.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Ten-fold cross-validation over an image folder.
    Kfold {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: Option<PathBuf>,
        /// Folds trained concurrently.
        #[arg(long)]
        jobs: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Print parameter counts, depth and receptive fields.
    Inspect {
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Train {
            config,
            checkpoint,
            data,
            seed,
        } => {
            let ov = Overrides {
                data,
                seed,
                jobs: None,
            };
            cmd_train(&config, &ov, checkpoint.as_deref()).map(drop)
        }
        Command::Eval {
            checkpoint,
            data,
            config,
            seed,
        } => {
            let ov = Overrides {
                data: data.clone(),
                seed,
                jobs: None,
            };
            cmd_eval(&checkpoint, data.as_deref(), config.as_deref(), &ov).map(drop)
        }
        Command::Kfold {
            config,
            data,
            jobs,
            seed,
        } => cmd_kfold(&config, &Overrides { data, seed, jobs }).map(drop),
        Command::Inspect { config } => cmd_inspect(config.as_deref()).map(drop),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
