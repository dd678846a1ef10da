mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

/// Exit code for command-line usage errors.
pub const EXIT_USAGE: u8 = 64;
pub const EXIT_VALIDATION: u8 = 1;
pub const EXIT_NUMERICAL: u8 = 2;

#[derive(Debug, Parser)]
#[command(name = "coxshap", version, about = "Cox and boosted-tree survival models with SHAP hazard ratios")]
pub struct Cli {
    /// Worker threads for bootstrap replicates, CV folds and tuning (default: all cores).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,

    /// Log one line per pipeline stage to stderr.
    #[arg(long, short, global = true)]
    pub verbose: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct DataArgs {
    /// Input survival CSV.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "time")]
    pub time_col: String,
    #[arg(long, default_value = "event")]
    pub event_col: String,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct GbtArgs {
    /// Hyperparameter JSON (as written by `tune`); flags below override it.
    #[arg(long)]
    pub params: Option<PathBuf>,
    #[arg(long)]
    pub eta: Option<f64>,
    #[arg(long)]
    pub max_depth: Option<usize>,
    #[arg(long)]
    pub min_child_weight: Option<f64>,
    #[arg(long)]
    pub reg_lambda: Option<f64>,
    #[arg(long)]
    pub reg_alpha: Option<f64>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub subsample: Option<f64>,
    #[arg(long)]
    pub colsample_bytree: Option<f64>,
    #[arg(long)]
    pub n_rounds: Option<usize>,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Cox,
    Gbt,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(tag = "command", rename_all = "kebab-case")]
pub enum Command {
    /// Generate a synthetic dataset with binary covariates and known coefficients.
    Simulate {
        #[arg(long)]
        n: usize,
        /// Comma-separated log-hazard coefficients, one per covariate.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true, required = true)]
        betas: Vec<f64>,
        /// Exact fraction of right-censored subjects.
        #[arg(long, default_value_t = 0.2)]
        censor: f64,
        #[arg(long, default_value_t = 10_000.0)]
        max_time: f64,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit a Cox proportional hazards model (missing values imputed).
    FitCox {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train a boosted Cox tree ensemble and write it as JSON.
    FitGbt {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        gbt: GbtArgs,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Random search over boosting hyperparameters by cross-validated C-index.
    Tune {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, default_value_t = 100)]
        rounds: usize,
        #[arg(long, default_value_t = 5)]
        folds: usize,
        #[arg(long)]
        seed: u64,
        /// Best hyperparameters (JSON report).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Evaluation trace, one JSON object per line.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// k-fold cross-validated C-index of one model family.
    Cv {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, value_enum)]
        model: ModelKind,
        #[command(flatten)]
        gbt: GbtArgs,
        #[arg(long, default_value_t = 5)]
        folds: usize,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// TreeSHAP attributions of a trained ensemble on a dataset.
    Shap {
        #[command(flatten)]
        data: DataArgs,
        /// Ensemble JSON written by `fit-gbt`.
        #[arg(long)]
        model: PathBuf,
        /// CSV output (phi0 line, header, one row per record).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Bootstrap SHAP hazard ratios of the boosted model.
    Hr {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        gbt: GbtArgs,
        /// Bootstrap replicates; 100 is a reasonable fast mode.
        #[arg(long, default_value_t = 1000)]
        boot: usize,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Flat CSV copy of the estimates.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Kaplan-Meier curves, optionally per subgroup of one variable.
    Km {
        #[command(flatten)]
        data: DataArgs,
        /// Split by this variable (1 vs 0 for binary, median cut otherwise).
        #[arg(long)]
        by: Option<String>,
        /// Directory for curve CSVs and the summary JSON.
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
    },
    /// Cox and boosted-model hazard ratios side by side.
    Compare {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        gbt: GbtArgs,
        /// Bootstrap replicates; 100 is a reasonable fast mode.
        #[arg(long, default_value_t = 1000)]
        boot: usize,
        /// Random-search evaluations when no hyperparameters are given.
        #[arg(long, default_value_t = 100)]
        tune_rounds: usize,
        #[arg(long, default_value_t = 5)]
        folds: usize,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(EXIT_USAGE),
            };
        }
    };
    let level = if cli.verbose { log::LevelFilter::Info } else { log::LevelFilter::Warn };
    env_logger::Builder::new()
        .filter_level(level)
        .format_timestamp(None)
        .init();

    let run = || commands::dispatch(&cli.command);
    let result = match cli.jobs {
        Some(0) => {
            eprintln!("error: --jobs must be at least 1");
            return ExitCode::from(EXIT_USAGE);
        }
        Some(jobs) => match rayon::ThreadPoolBuilder::new().num_threads(jobs).build() {
            Ok(pool) => pool.install(run),
            Err(e) => {
                eprintln!("error: cannot start worker threads: {e}");
                return ExitCode::from(EXIT_NUMERICAL);
            }
        },
        None => run(),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_numerical() { EXIT_NUMERICAL } else { EXIT_VALIDATION })
        }
    }
}
