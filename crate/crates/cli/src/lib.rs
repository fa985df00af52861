//! Command-line front end: CSV and JSON input/output, run manifests and
//! chain/replicate parallelism around `renewal-mcmc-core`.

pub mod commands;
pub mod config;
pub mod error;
pub mod io;

use clap::{Parser, Subcommand};

use crate::commands::{
    deconvolve::DeconvolveArgs, distributions::DistributionsArgs, evaluate::EvaluateArgs, fit::FitArgs,
    predict::PredictArgs, preprocess::PreprocessArgs, sequential::SequentialArgs, simulate::SimulateArgs,
};
use crate::error::{CliError, CliResult};

pub const THREADS_ENV: &str = "RENEWAL_MCMC_THREADS";

/// Joint estimation of daily infections and reproduction numbers from
/// detection counts.
#[derive(Debug, Parser)]
#[command(name = "renewal-mcmc", version, about, propagate_version = true)]
pub struct Cli {
    /// Worker threads for chain and replicate parallelism [default: available cores]
    #[arg(long, global = true, env = THREADS_ENV)]
    pub threads: Option<usize>,

    /// Only log warnings and errors
    #[arg(long, short, global = true)]
    pub quiet: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Print or write the discretized infectivity profile and detection delay
    Distributions(DistributionsArgs),
    /// Remove the weekday pattern from a detection series
    Preprocess(PreprocessArgs),
    /// Reconstruct infections from detections by EM deconvolution
    Deconvolve(DeconvolveArgs),
    /// Simulate an epidemic path and its detections
    Simulate(SimulateArgs),
    /// Run the MCMC sampler on one window of detections
    Fit(FitArgs),
    /// Predict the days after a fitted window
    Predict(PredictArgs),
    /// Fit rolling windows and stitch the per-day history
    Sequential(SequentialArgs),
    /// Run the simulation experiment comparing estimators
    Evaluate(EvaluateArgs),
}

/// Resources shared by the commands.
pub struct Context {
    pub threads: usize,
    pub pool: rayon::ThreadPool,
}

impl Context {
    pub fn new(threads: Option<usize>) -> CliResult<Self> {
        let threads = match threads {
            Some(0) => return Err(CliError::Usage("--threads must be at least 1".into())),
            Some(n) => n,
            None => std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1),
        };
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| CliError::Usage(format!("cannot start {threads} worker threads: {e}")))?;
        Ok(Context { threads, pool })
    }
}

pub fn run(cli: Cli) -> CliResult<()> {
    let ctx = Context::new(cli.threads)?;
    match cli.command {
        Command::Distributions(a) => commands::distributions::run(&a, &ctx),
        Command::Preprocess(a) => commands::preprocess::run(&a, &ctx),
        Command::Deconvolve(a) => commands::deconvolve::run(&a, &ctx),
        Command::Simulate(a) => commands::simulate::run(&a, &ctx),
        Command::Fit(a) => commands::fit::run(&a, &ctx),
        Command::Predict(a) => commands::predict::run(&a, &ctx),
        Command::Sequential(a) => commands::sequential::run(&a, &ctx),
        Command::Evaluate(a) => commands::evaluate::run(&a, &ctx),
    }
}
