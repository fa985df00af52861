use std::fs;
use std::path::PathBuf;

use clap::Args;
use serde::Serialize;

use renewal_mcmc_core::mcmc::posterior_predict;

use super::digests;
use super::fit::{check_state, write_predictive, FitState, FIT_STATE};
use crate::config::{parse, to_value};
use crate::error::{CliError, CliResult};
use crate::io::OutputDir;
use crate::Context;

#[derive(Debug, Clone, Args)]
pub struct PredictArgs {
    /// Output directory of an earlier `fit`
    #[arg(long)]
    pub fit_dir: PathBuf,
    /// Days to predict past the fitted window
    #[arg(long, default_value_t = 7)]
    pub horizon: usize,
    /// Random seed; the seed of the fit when omitted
    #[arg(long)]
    pub seed: Option<u64>,
    /// Directory receiving predictive.csv and the manifest
    #[arg(long)]
    pub output_dir: PathBuf,
}

#[derive(Debug, Serialize)]
struct Resolved<'a> {
    fit_dir: String,
    horizon: usize,
    tau: f64,
    quantiles: &'a [f64],
}

pub fn run(args: &PredictArgs, ctx: &Context) -> CliResult<()> {
    if args.horizon == 0 {
        return Err(CliError::Usage("--horizon must be at least 1".into()));
    }
    let path = args.fit_dir.join(FIT_STATE);
    let text = fs::read_to_string(&path).map_err(|e| CliError::io(format!("cannot read {}", path.display()), e))?;
    let state: FitState = parse(&text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    check_state(&state)?;
    state.config.validate()?;
    let seed = args.seed.unwrap_or(state.seed);
    let profile = state.config.model.profile()?;
    let delay = state.config.model.delay_for(state.first_date)?;
    let p = posterior_predict(
        &state.final_states,
        args.horizon,
        state.config.tau,
        &profile,
        delay.model(),
        &state.config.quantiles,
        seed,
    )?;
    let mut out = OutputDir::create(&args.output_dir)?;
    write_predictive(&mut out, state.first_date, &p)?;
    let resolved = Resolved {
        fit_dir: args.fit_dir.display().to_string(),
        horizon: args.horizon,
        tau: state.config.tau,
        quantiles: &state.config.quantiles,
    };
    out.finish(
        "predict",
        to_value(&resolved),
        vec![seed],
        ctx.threads,
        digests(&[&path])?,
    )?;
    Ok(())
}
