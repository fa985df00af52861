use std::path::PathBuf;

use chrono::NaiveDate;
use clap::Args;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use renewal_mcmc_core::distributions::InfectivityProfile;
use renewal_mcmc_core::mcmc::{
    posterior_predict, posterior_quantiles, run_chain, ChainStats, Hyperparams, McmcConfig, PosteriorSamples,
    Prediction, Problem,
};
use renewal_mcmc_core::model::EpidemicState;
use renewal_mcmc_core::preprocess::smooth_detections;
use renewal_mcmc_core::sequential::{constant_lambda0, window_lambda0};
use renewal_mcmc_core::window::{Layout, WindowDelay};

use super::digests;
use crate::config::{load, to_value, Delay, FitConfig, PRE_WINDOW_DAYS};
use crate::error::{CliError, CliResult};
use crate::io::{date_of, encode_samples, fmt_f64, quantile_headers, read_series, OutputDir};
use crate::Context;

pub const FIT_STATE: &str = "fit_state.json";
pub const FIT_STATE_VERSION: u32 = 1;

#[derive(Debug, Clone, Args)]
pub struct FitArgs {
    /// Detection counts, CSV with header `date,count`
    #[arg(long)]
    pub input: PathBuf,
    /// JSON config (model, sigma, tau, lambda0, pre_window, mcmc, quantiles, smoothing, predict_horizon, write_samples)
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Random seed
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Directory receiving the quantile tables, diagnostics and the manifest
    #[arg(long)]
    pub output_dir: PathBuf,
}

/// One fitted window.
#[derive(Debug)]
pub struct WindowFit {
    pub samples: PosteriorSamples,
    pub profile: InfectivityProfile,
    pub delay: Delay,
    /// Counts the sampler saw, before rounding.
    pub detections: Vec<f64>,
    pub lambda0: Vec<f64>,
    pub warnings: Vec<String>,
}

/// Inputs of one window fit.
#[derive(Debug, Clone)]
pub struct WindowData<'a> {
    /// Date of window day 1.
    pub first: NaiveDate,
    /// Raw counts of the window.
    pub raw: &'a [f64],
    /// Counts already smoothed over a longer stretch; smoothing per `config` otherwise.
    pub smoothed: Option<&'a [f64]>,
    /// Raw counts of the days just before the window.
    pub pre_window: Option<&'a [f64]>,
    /// Prior means of the initial days carried from an earlier window.
    pub carried: Option<Vec<f64>>,
}

/// Runs all chains of one window in parallel; results do not depend on the thread count.
pub fn fit_window(config: &FitConfig, data: WindowData<'_>, seed: u64, ctx: &Context) -> CliResult<WindowFit> {
    let detections = match (data.smoothed, &config.smoothing) {
        (Some(s), _) => s.to_vec(),
        (None, Some(s)) => smooth_detections(data.raw, s)?.smoothed,
        (None, None) => data.raw.to_vec(),
    };
    let profile = config.model.profile()?;
    let delay = config.model.delay_for(data.first)?;
    let layout = Layout::for_models(detections.len(), &profile, delay.model())?;
    let wd = WindowDelay::new(layout, delay.model())?;
    let carried = data
        .carried
        .or_else(|| config.lambda0.map(|x| constant_lambda0(x, layout.k_w)));
    let (lambda0, warning) = window_lambda0(carried, data.pre_window, &detections, &wd, layout.k_w, &config.mcmc)?;
    let mut warnings: Vec<String> = warning.into_iter().collect();
    let hyper = Hyperparams::new(config.sigma, config.tau, lambda0.clone()).map_err(|e| CliError::at("", e))?;
    let problem = Problem::new(&detections, &profile, delay.model(), hyper)?;
    let outputs = ctx.pool.install(|| {
        (0..config.mcmc.chains)
            .into_par_iter()
            .map(|c| run_chain(&problem, &config.mcmc, seed, c))
            .collect::<Result<Vec<_>, _>>()
    })?;
    let samples = PosteriorSamples::from_chains(layout, seed, outputs)?;
    warnings.extend(samples.warnings.iter().cloned());
    for w in &warnings {
        log::warn!("{w}");
    }
    Ok(WindowFit {
        samples,
        profile,
        delay,
        detections,
        lambda0,
        warnings,
    })
}

/// What `predict` needs to continue a fit.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitState {
    pub format_version: u32,
    /// Date of window day 1.
    pub first_date: NaiveDate,
    pub t: usize,
    pub k_w: usize,
    pub k_m: usize,
    pub seed: u64,
    pub config: FitConfig,
    /// Posterior draws of the Markov state at the end of the window.
    pub final_states: Vec<EpidemicState>,
}

#[derive(Debug, Serialize)]
struct ChainDiagnostics {
    chain: usize,
    infection_acceptance: f64,
    log_r_acceptance: f64,
    infection_acceptance_burn_in: f64,
    stats: ChainStats,
}

#[derive(Debug, Serialize)]
struct Diagnostics {
    first_date: String,
    last_date: String,
    t: usize,
    k_w: usize,
    k_m: usize,
    iterations: usize,
    burn_in: usize,
    thin: usize,
    chains: usize,
    draws_per_chain: usize,
    n_draws: usize,
    chain_stats: Vec<ChainDiagnostics>,
    /// Potential scale reduction of `L` per latent day, from the first latent day on.
    r_hat: Vec<Option<f64>>,
    max_r_hat: Option<f64>,
    lambda0: Vec<f64>,
    rounded_detections: Vec<u64>,
    warnings: Vec<String>,
}

fn diagnostics(fit: &WindowFit, first: NaiveDate, mcmc: &McmcConfig) -> Diagnostics {
    let s = &fit.samples;
    let l = s.layout;
    let r_hat: Vec<Option<f64>> = s.r_hat().into_iter().map(|v| v.is_finite().then_some(v)).collect();
    let max_r_hat = r_hat
        .iter()
        .flatten()
        .copied()
        .fold(None, |m: Option<f64>, v| Some(m.map_or(v, |m| m.max(v))));
    Diagnostics {
        first_date: date_of(first, 1).to_string(),
        last_date: date_of(first, l.t as i64).to_string(),
        t: l.t,
        k_w: l.k_w,
        k_m: l.k_m,
        iterations: mcmc.iterations,
        burn_in: mcmc.burn_in,
        thin: mcmc.thin,
        chains: s.chains,
        draws_per_chain: s.draws_per_chain,
        n_draws: s.n_draws(),
        chain_stats: s
            .stats
            .iter()
            .enumerate()
            .map(|(chain, st)| ChainDiagnostics {
                chain,
                infection_acceptance: st.infection_block.rate(),
                log_r_acceptance: st.log_r_block.rate(),
                infection_acceptance_burn_in: st.infection_block_burn_in.rate(),
                stats: st.clone(),
            })
            .collect(),
        r_hat,
        max_r_hat,
        lambda0: fit.lambda0.clone(),
        rounded_detections: fit
            .detections
            .iter()
            .map(|&x| renewal_mcmc_core::mcmc::round_half_even(x))
            .collect(),
        warnings: fit.warnings.clone(),
    }
}

/// Quantile table rows `date, q...` for per-day values starting at window day `first_day`.
pub fn quantile_rows(first: NaiveDate, first_day: i64, table: &[Vec<f64>]) -> Vec<Vec<String>> {
    table
        .iter()
        .enumerate()
        .map(|(j, q)| {
            let mut row = vec![date_of(first, first_day + j as i64).to_string()];
            row.extend(q.iter().map(|x| fmt_f64(*x)));
            row
        })
        .collect()
}

pub fn write_predictive(out: &mut OutputDir, first: NaiveDate, p: &Prediction) -> CliResult<()> {
    let mut header = vec!["variable".to_string(), "date".to_string()];
    header.extend(quantile_headers(&p.probs));
    let mut rows = Vec::new();
    for (name, table, offset) in [("R", &p.r, 0), ("I", &p.infections, 0), ("D", &p.detections, 1)] {
        for mut row in quantile_rows(first, p.first_day + offset, table) {
            row.insert(0, name.to_string());
            rows.push(row);
        }
    }
    out.write_csv("predictive.csv", &header, &rows)
}

pub fn run(args: &FitArgs, ctx: &Context) -> CliResult<()> {
    let config: FitConfig = load(args.config.as_deref())?;
    config.validate()?;
    let series = read_series(&args.input)?;
    let (pre, dates, raw) = if config.pre_window {
        if series.len() <= PRE_WINDOW_DAYS {
            return Err(CliError::Data(format!(
                "pre_window needs more than {PRE_WINDOW_DAYS} rows, found {}",
                series.len()
            )));
        }
        (
            Some(&series.counts[..PRE_WINDOW_DAYS]),
            &series.dates[PRE_WINDOW_DAYS..],
            &series.counts[PRE_WINDOW_DAYS..],
        )
    } else {
        (None, &series.dates[..], &series.counts[..])
    };
    let first = dates[0];
    log::info!(
        "fitting {} days ({} to {}) with {} chains of {} iterations on {} threads",
        raw.len(),
        first,
        dates[dates.len() - 1],
        config.mcmc.chains,
        config.mcmc.iterations,
        ctx.threads
    );
    let fit = fit_window(
        &config,
        WindowData {
            first,
            raw,
            smoothed: None,
            pre_window: pre,
            carried: None,
        },
        args.seed,
        ctx,
    )?;
    let samples = &fit.samples;
    let layout = samples.layout;
    let q = posterior_quantiles(samples, &config.quantiles)?;

    let mut out = OutputDir::create(&args.output_dir)?;
    let mut header = vec!["date".to_string()];
    header.extend(quantile_headers(&config.quantiles));
    out.write_csv("quantiles_R.csv", &header, &quantile_rows(first, q.first_day, &q.r))?;
    out.write_csv(
        "quantiles_I.csv",
        &header,
        &quantile_rows(first, q.first_day, &q.infections),
    )?;
    if config.predict_horizon > 0 {
        let p = posterior_predict(
            &samples.final_states,
            config.predict_horizon,
            config.tau,
            &fit.profile,
            fit.delay.model(),
            &config.quantiles,
            args.seed,
        )?;
        write_predictive(&mut out, first, &p)?;
    }
    out.write_json("diagnostics.json", &diagnostics(&fit, first, &config.mcmc))?;
    if config.write_samples {
        let bytes = encode_samples(layout.t, layout.k_m, layout.k_w, &samples.log_r, &samples.infections);
        out.write_bytes("samples.bin", &bytes)?;
    }
    let resolved = config.resolved()?;
    out.write_json(
        FIT_STATE,
        &FitState {
            format_version: FIT_STATE_VERSION,
            first_date: first,
            t: layout.t,
            k_w: layout.k_w,
            k_m: layout.k_m,
            seed: args.seed,
            config: resolved.clone(),
            final_states: samples.final_states.clone(),
        },
    )?;
    let mut inputs = vec![args.input.as_path()];
    if let Some(c) = &args.config {
        inputs.push(c);
    }
    out.finish(
        "fit",
        to_value(&resolved),
        vec![args.seed],
        ctx.threads,
        digests(&inputs)?,
    )?;
    Ok(())
}

/// Layout check used when continuing from a saved state.
pub fn check_state(state: &FitState) -> CliResult<Layout> {
    if state.format_version != FIT_STATE_VERSION {
        return Err(CliError::Data(format!(
            "{FIT_STATE}: unsupported format version {}",
            state.format_version
        )));
    }
    let layout = Layout::new(state.t, state.k_w, state.k_m)?;
    for (i, s) in state.final_states.iter().enumerate() {
        s.check(state.k_w, state.k_m)
            .map_err(|e| CliError::Data(format!("{FIT_STATE}: state {i}: {e}")))?;
    }
    if state.final_states.is_empty() {
        return Err(CliError::Data(format!("{FIT_STATE}: no posterior states")));
    }
    Ok(layout)
}
