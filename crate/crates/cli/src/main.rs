//! `lifespan`: staged, file-driven experiment runner.
//!
//! generate -> label / extract -> train / gridsearch / evaluate / subsets /
//! crossapply / importance / bands / binary. Every report is written as
//! `<prefix>.json`, `<prefix>.md` and CSV tables.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use lifespan_core::Error;

#[derive(Parser, Debug)]
#[command(name = "lifespan", version, about = "User lifetime prediction experiments")]
struct Cli {
    /// Upper bound on worker threads. Never changes any output byte.
    #[arg(long, global = true)]
    workers: Option<usize>,

    /// More log output (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    /// Only log errors.
    #[arg(short, long, global = true)]
    quiet: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct LogInput {
    /// Event log (JSON-Lines, or CSV by extension).
    pub log: PathBuf,
    /// End of the observation period in minutes. Defaults to the log's
    /// `.meta.json` sidecar, then to the latest event.
    #[arg(long)]
    pub observation_end: Option<i64>,
    /// Churn margin in days.
    #[arg(long, default_value_t = lifespan_core::events::DEFAULT_CHURN_DAYS)]
    pub churn_days: i64,
    /// File of blocked user ids, one per line.
    #[arg(long)]
    pub blocked: Option<PathBuf>,
    /// Drop blocked users instead of keeping them.
    #[arg(long, requires = "blocked")]
    pub exclude_blocked: bool,
}

#[derive(Args, Debug, Clone)]
pub struct ModelOpts {
    /// reg, clf or binary.
    #[arg(long, default_value = "clf")]
    pub task: String,
    /// Window for `--task binary`: 1d, 7d, 14d, 1m, 3m.
    #[arg(long)]
    pub window: Option<String>,
    #[arg(long, default_value_t = 32)]
    pub estimators: usize,
    #[arg(long, default_value_t = 16)]
    pub depth: usize,
    /// all, sqrt or a fraction in (0, 1].
    #[arg(long, default_value = "sqrt")]
    pub max_features: String,
    #[arg(long, default_value_t = 1)]
    pub min_samples_leaf: usize,
    #[arg(long, default_value_t = 5)]
    pub folds: usize,
}

#[derive(Args, Debug, Clone)]
pub struct MatrixInput {
    /// Feature matrix CSV written by `extract` (its `.json` sidecar must exist).
    pub matrix: PathBuf,
    /// Restrict to a feature subset before modeling.
    #[arg(long)]
    pub subset: Option<String>,
    /// Restrict to one community's rows.
    #[arg(long)]
    pub community: Option<String>,
    /// Master seed; 1 when omitted.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic event log.
    Generate {
        /// Named preset: five-cities, country-mini, tiny.
        #[arg(long, conflicts_with = "config")]
        preset: Option<String>,
        /// TOML generator config.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Override the config's signal strength.
        #[arg(long)]
        signal: Option<f64>,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Write per-user lifetime labels.
    Label {
        #[command(flatten)]
        input: LogInput,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Extract a feature matrix (CSV plus JSON sidecar).
    Extract {
        #[command(flatten)]
        input: LogInput,
        #[arg(long, default_value = "all")]
        subset: String,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Train one forest on every row and save it.
    Train {
        #[command(flatten)]
        data: MatrixInput,
        #[command(flatten)]
        model: ModelOpts,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Cross-validate every point of a hyperparameter grid.
    Gridsearch {
        #[command(flatten)]
        data: MatrixInput,
        #[command(flatten)]
        model: ModelOpts,
        /// TOML grid; defaults to depths 8, 16, 32 by 32 and 64 trees.
        #[arg(long)]
        grid: Option<PathBuf>,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Per-community, pooled and downsampled cross-validation.
    Evaluate {
        #[command(flatten)]
        data: MatrixInput,
        #[command(flatten)]
        model: ModelOpts,
        /// Downsampled draws of the pooled set per community.
        #[arg(long, default_value_t = 5)]
        draws: usize,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Cross-validate each cumulative feature subset.
    Subsets {
        #[command(flatten)]
        data: MatrixInput,
        #[command(flatten)]
        model: ModelOpts,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Apply each community's model to every other community.
    Crossapply {
        #[command(flatten)]
        data: MatrixInput,
        #[command(flatten)]
        model: ModelOpts,
        /// Trained models (from `train --community`); trained in-process when omitted.
        #[arg(long = "model")]
        models: Vec<PathBuf>,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Feature importance per community and their rank correlations.
    Importance {
        #[command(flatten)]
        data: MatrixInput,
        #[command(flatten)]
        model: ModelOpts,
        /// Add a label-shuffled model of each community as a control.
        #[arg(long)]
        control: bool,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Decile bands of every feature by lifetime bucket.
    Bands {
        #[command(flatten)]
        data: MatrixInput,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Binary "lifetime longer than w" classifiers against multiclass.
    Binary {
        #[command(flatten)]
        data: MatrixInput,
        #[command(flatten)]
        model: ModelOpts,
        #[arg(short, long)]
        out: PathBuf,
    },
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::InvalidInput(_) | Error::Parse { .. } | Error::Json(_) | Error::Csv(_) => 2,
        Error::CatalogMismatch { .. } | Error::Incompatible(_) => 3,
        Error::Io(io) if io.kind() == std::io::ErrorKind::NotFound => 2,
        Error::Io(_) => 1,
    }
}

fn init_logging(verbose: u8, quiet: bool) {
    let level = match (quiet, verbose) {
        (true, _) => log::LevelFilter::Error,
        (false, 0) => log::LevelFilter::Info,
        (false, 1) => log::LevelFilter::Debug,
        _ => log::LevelFilter::Trace,
    };
    // Builder::new does not consult RUST_LOG
    env_logger::Builder::new()
        .filter_level(level)
        .format_timestamp(None)
        .init();
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    init_logging(cli.verbose, cli.quiet);
    let argv: Vec<String> = std::env::args().collect();
    let workers = cli
        .workers
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    if workers == 0 {
        log::error!("--workers must be at least 1");
        return ExitCode::from(2);
    }
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(workers).build() {
        Ok(p) => p,
        Err(e) => {
            log::error!("thread pool: {e}");
            return ExitCode::from(1);
        }
    };
    let outcome = std::panic::catch_unwind(std::panic::AssertUnwindSafe(|| {
        pool.install(|| commands::run(cli.command, argv))
    }));
    match outcome {
        Ok(Ok(())) => ExitCode::SUCCESS,
        Ok(Err(e)) => {
            log::error!("{e}");
            ExitCode::from(exit_code(&e))
        }
        Err(_) => ExitCode::from(1),
    }
}
