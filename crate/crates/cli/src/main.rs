mod commands;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use bridgesim_core::config::ConfigError;
use bridgesim_core::BridgeError;
use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "bridgesim", version, about = "Simulate conditioned diffusions with guided proposals, pCN and neural bridges")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Experiment config (JSON).
    #[arg(long, conflicts_with = "model")]
    pub config: Option<PathBuf>,
    /// Bundled preset: brownian, ou, cell-normal, cell-rare, cell-multimodal,
    /// fhn-normal, fhn-rare, landmark, landmark-50.
    #[arg(long)]
    pub model: Option<String>,
    /// Overrides the config seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory; defaults to the config's `output_dir`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct HistArgs {
    /// Time of the marginal.
    #[arg(long)]
    pub time: f64,
    #[arg(long, default_value_t = 0)]
    pub coordinate: usize,
    #[arg(long, default_value_t = bridgesim_core::analytics::DEFAULT_BINS)]
    pub bins: usize,
    /// Minimum peak prominence as a fraction of the highest density.
    #[arg(long, default_value_t = bridgesim_core::analytics::DEFAULT_PROMINENCE)]
    pub prominence: f64,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Solve the backward ODEs and dump (t, L, M†, M, u) per node.
    Odes(#[command(flatten)] Common),
    /// Simulate the unconditioned process, optionally keeping paths that end
    /// near the observation.
    Forward {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 1000)]
        paths: usize,
        /// Keep paths with `‖L x_T − v‖ ≤ radius`.
        #[arg(long)]
        radius: Option<f64>,
        /// Number of (surviving) trajectories written as CSV.
        #[arg(long, default_value_t = 30)]
        keep: usize,
    },
    /// Sample guided proposals with their log-weights.
    Guided {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 30)]
        paths: usize,
    },
    /// Run preconditioned Crank–Nicolson chains targeting the bridge.
    Pcn {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        eta: Option<f64>,
        #[arg(long)]
        iters: Option<usize>,
        #[arg(long)]
        burn_in: Option<usize>,
        #[arg(long)]
        thin: Option<usize>,
        #[arg(long)]
        chains: Option<usize>,
    },
    /// Train the neural drift correction.
    Train {
        #[command(flatten)]
        common: Common,
        /// Checkpoint path; defaults to `<out>/checkpoint.json`.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// NDJSON training log; defaults to `<out>/train.ndjson`.
        #[arg(long)]
        log: Option<PathBuf>,
        #[arg(long)]
        iterations: Option<usize>,
        #[arg(long)]
        batch_size: Option<usize>,
    },
    /// Sample the trained neural bridge.
    Sample {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 30)]
        paths: usize,
    },
    /// Marginal histogram and mode count of a directory of trajectory CSVs.
    Hist {
        input: PathBuf,
        #[command(flatten)]
        args: HistArgs,
    },
    /// Compare the marginals of two trajectory directories.
    Compare {
        a: PathBuf,
        b: PathBuf,
        #[command(flatten)]
        args: HistArgs,
    },
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Bridge(#[from] BridgeError),
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

impl CliError {
    /// 1 for invalid input, 2 for failures while running.
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(ConfigError::Io(_)) | CliError::Io { .. } => 2,
            CliError::Config(_) | CliError::Usage(_) => 1,
            CliError::Bridge(e) => match e {
                BridgeError::NonFiniteState { .. }
                | BridgeError::SingularMdag { .. }
                | BridgeError::NoSurvivors { .. } => 2,
                _ => 1,
            },
        }
    }
}

fn configure_threads() -> Result<(), CliError> {
    let Ok(value) = std::env::var("BRIDGESIM_THREADS") else {
        return Ok(());
    };
    let n: usize = value
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::Usage(format!("BRIDGESIM_THREADS must be a positive integer, got {value:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Usage(e.to_string()))
}

fn run(cli: Cli) -> Result<(), CliError> {
    configure_threads()?;
    match cli.command {
        Command::Odes(common) => commands::odes(&common),
        Command::Forward { common, paths, radius, keep } => commands::forward(&common, paths, radius, keep),
        Command::Guided { common, paths } => commands::guided(&common, paths),
        Command::Pcn { common, eta, iters, burn_in, thin, chains } => {
            commands::pcn(&common, commands::PcnOverrides { eta, iters, burn_in, thin, chains })
        }
        Command::Train { common, checkpoint, log, iterations, batch_size } => {
            commands::train(&common, checkpoint, log, iterations, batch_size)
        }
        Command::Sample { common, checkpoint, paths } => commands::sample(&common, &checkpoint, paths),
        Command::Hist { input, args } => commands::hist(&input, &args),
        Command::Compare { a, b, args } => commands::compare(&a, &b, &args),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
