//! `paleocorr`: correlation of irregularly sampled, age-uncertain records.
//!
//! Settings come from defaults, then `--config`, then `PALEOCORR__SECTION__KEY`
//! environment variables, then command-line flags.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;
mod config;
mod error;
mod records;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::commands::PairInputs;
use crate::config::RunConfig;
use crate::error::{CliError, CliResult};

#[derive(Parser, Debug)]
#[command(name = "paleocorr", version, about = "Bayesian correlation of age-uncertain time series")]
struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Worker threads; 0 uses every core.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// More logging; repeat for debug output.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate a pseudoproxy pair with cores, dates and age models.
    Simulate,
    /// Calibrate a dating table and build an age model.
    Calibrate {
        #[arg(long)]
        dates: PathBuf,
        /// Record whose depths receive ages.
        #[arg(long)]
        record: Option<PathBuf>,
    },
    /// Posterior correlation of two records.
    Correlate(PairArgs),
    /// Sliding-window correlation of two records.
    Windows {
        #[command(flatten)]
        pair: PairArgs,
        /// Scan for the best lag first.
        #[arg(long)]
        lag_scan: bool,
    },
    /// Pseudoproxy benchmark sweep.
    Experiment {
        #[arg(long)]
        pairs: Option<usize>,
    },
}

#[derive(Args, Debug)]
struct PairArgs {
    record_a: Option<PathBuf>,
    record_b: Option<PathBuf>,
    #[arg(long)]
    dates_a: Option<PathBuf>,
    #[arg(long)]
    dates_b: Option<PathBuf>,
    /// Pool over this many age-model realizations.
    #[arg(long)]
    ensemble: Option<usize>,
}

impl From<PairArgs> for PairInputs {
    fn from(a: PairArgs) -> Self {
        PairInputs {
            record_a: a.record_a,
            record_b: a.record_b,
            dates_a: a.dates_a,
            dates_b: a.dates_b,
            ensemble: a.ensemble,
        }
    }
}

fn run(cli: Cli) -> CliResult<()> {
    let mut cfg = RunConfig::load(cli.config.as_deref(), std::env::vars())?;
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(w) = cli.workers {
        cfg.workers = w;
    }
    match &cli.command {
        Command::Windows { lag_scan: true, .. } => cfg.windows.lag_scan = true,
        Command::Experiment { pairs: Some(n) } => cfg.experiment.n_pairs = *n,
        _ => {}
    }
    cfg.validate()?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build_global()
        .map_err(|e| CliError::Config(format!("worker pool: {e}")))?;
    let out = &cli.out;
    match cli.command {
        Command::Simulate => commands::simulate(&cfg, out),
        Command::Calibrate { dates, record } => commands::calibrate(&cfg, &dates, record.as_deref(), out),
        Command::Correlate(pair) => commands::correlate(&cfg, pair.into(), out),
        Command::Windows { pair, .. } => commands::windows(&cfg, pair.into(), out),
        Command::Experiment { .. } => commands::experiment(&cfg, out),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
