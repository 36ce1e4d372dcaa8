use std::panic::{self, AssertUnwindSafe};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use skipgp::InferenceMode;

mod artifacts;
mod commands;
mod config;
mod dataset;
mod error;
mod report;

use error::{CliError, CliResult};

#[derive(Parser)]
#[command(name = "skipgp", version, about = "Scalable Gaussian process regression with structured product kernels")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ModeArg {
    Exact,
    Skip,
}

impl From<ModeArg> for InferenceMode {
    fn from(mode: ModeArg) -> Self {
        match mode {
            ModeArg::Exact => InferenceMode::ExactDense,
            ModeArg::Skip => InferenceMode::Skip,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train a model described by a JSON config file
    Fit {
        /// Path to the run configuration
        #[arg(long)]
        config: PathBuf,
        /// Override the config's random seed
        #[arg(long)]
        seed: Option<u64>,
        /// Override the config's inference mode
        #[arg(long, value_enum)]
        mode: Option<ModeArg>,
        /// Override the config's output directory
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Predict with a previously fitted model
    Predict {
        /// Path to a saved model.json
        #[arg(long)]
        model: PathBuf,
        /// CSV of inputs (target column optional)
        #[arg(long)]
        data: PathBuf,
        /// Output directory
        #[arg(long)]
        out: PathBuf,
    },
    /// Measure matrix-vector product accuracy of the low-rank product
    /// factorization against dense evaluation
    BenchMvm {
        /// Number of input points
        #[arg(long)]
        n: usize,
        /// Random seed
        #[arg(long)]
        seed: u64,
        /// Output directory
        #[arg(long)]
        out: PathBuf,
    },
    /// Time the likelihood evaluation as the inducing grid grows
    BenchInducing {
        /// Training data CSV
        #[arg(long)]
        data: PathBuf,
        /// Comma-separated grid sizes
        #[arg(long = "m-list", value_delimiter = ',', required = true)]
        m_list: Vec<usize>,
        /// Output directory
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit the clustered multi-task model to a tasked dataset
    Multitask {
        /// CSV with columns task_id, x, y
        #[arg(long)]
        data: PathBuf,
        /// Number of clusters
        #[arg(long)]
        clusters: usize,
        /// Number of Gibbs sweeps
        #[arg(long)]
        sweeps: usize,
        /// Random seed
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output directory
        #[arg(long)]
        out: PathBuf,
    },
}

fn dispatch(command: Command) -> CliResult<()> {
    match command {
        Command::Fit {
            config,
            seed,
            mode,
            out,
        } => commands::fit::run(&config, seed, mode.map(InferenceMode::from), out),
        Command::Predict { model, data, out } => commands::predict::run(&model, &data, &out),
        Command::BenchMvm { n, seed, out } => commands::bench::mvm(n, seed, &out),
        Command::BenchInducing { data, m_list, out } => {
            commands::bench::inducing(&data, &m_list, &out)
        }
        Command::Multitask {
            data,
            clusters,
            sweeps,
            seed,
            out,
        } => commands::multitask::run(&data, clusters, sweeps, seed, &out),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    // A panic anywhere below becomes a structured internal error instead of
    // a raw backtrace on the user's terminal.
    panic::set_hook(Box::new(|_| {}));
    let outcome = panic::catch_unwind(AssertUnwindSafe(|| dispatch(cli.command)));
    match outcome {
        Ok(Ok(())) => ExitCode::SUCCESS,
        Ok(Err(error)) => {
            error.emit();
            ExitCode::from(error.exit_code())
        }
        Err(payload) => {
            let message = if let Some(s) = payload.downcast_ref::<&str>() {
                (*s).to_string()
            } else if let Some(s) = payload.downcast_ref::<String>() {
                s.clone()
            } else {
                "unknown panic".to_string()
            };
            let error = CliError::internal(message);
            error.emit();
            ExitCode::from(error.exit_code())
        }
    }
}
