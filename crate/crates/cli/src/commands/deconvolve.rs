use std::path::PathBuf;

use clap::Args;
use serde::Serialize;

use renewal_mcmc_core::deconvolution::{em_deconvolve, DeconvolutionConfig, Start};
use renewal_mcmc_core::preprocess::smooth_detections;
use renewal_mcmc_core::window::{Layout, WindowDelay};

use super::digests;
use crate::config::{load, to_value, DeconvolveConfig};
use crate::error::CliResult;
use crate::io::{date_of, fmt_f64, read_series, OutputDir};
use crate::Context;

#[derive(Debug, Clone, Args)]
pub struct DeconvolveArgs {
    /// Detection counts, CSV with header `date,count`
    #[arg(long)]
    pub input: PathBuf,
    /// JSON config (model, smoothing, em); defaults when omitted
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Directory receiving infections.csv, deconvolution.json and the manifest
    #[arg(long)]
    pub output_dir: PathBuf,
}

#[derive(Debug, Serialize)]
struct Sidecar<'a> {
    iterations: usize,
    converged: bool,
    final_chi_squared: f64,
    chi_squared_trace: &'a [f64],
    em: &'a DeconvolutionConfig,
    first_date: String,
    last_date: String,
}

pub fn run(args: &DeconvolveArgs, ctx: &Context) -> CliResult<()> {
    let config: DeconvolveConfig = load(args.config.as_deref())?;
    config.validate()?;
    let series = read_series(&args.input)?;
    let detections = match &config.smoothing {
        Some(s) => smooth_detections(&series.counts, s)?.smoothed,
        None => series.counts.clone(),
    };
    let t = detections.len();
    let delay = config.model.delay_for(series.first_date())?;
    let profile = config.model.profile()?;
    let layout = Layout::for_models(t, &profile, delay.model())?;
    let wd = WindowDelay::new(layout, delay.model())?;
    let em = config.em.clone().unwrap_or_else(|| DeconvolutionConfig::for_length(t));
    if let Start::Explicit(v) = &em.start {
        if v.len() != layout.n_latent() {
            return Err(crate::error::CliError::Config(format!(
                "/em/start/explicit: expected {} values (days {} to {}), found {}",
                layout.n_latent(),
                layout.first_latent_day(),
                layout.last_latent_day(),
                v.len()
            )));
        }
    }
    let result = em_deconvolve(&detections, &wd, &em)?;
    if !result.converged {
        log::warn!(
            "chi-squared threshold not reached after {} iterations (final {})",
            result.iterations,
            result.final_chi_squared()
        );
    }
    let first = series.first_date();
    let mut out = OutputDir::create(&args.output_dir)?;
    let rows: Vec<Vec<String>> = result
        .estimate
        .iter()
        .enumerate()
        .map(|(j, x)| vec![date_of(first, layout.latent_day(j)).to_string(), fmt_f64(*x)])
        .collect();
    out.write_csv("infections.csv", &["date".into(), "I_hat".into()], &rows)?;
    out.write_json(
        "deconvolution.json",
        &Sidecar {
            iterations: result.iterations,
            converged: result.converged,
            final_chi_squared: result.final_chi_squared(),
            chi_squared_trace: &result.chi_squared_trace,
            em: &em,
            first_date: date_of(first, layout.first_latent_day()).to_string(),
            last_date: date_of(first, layout.last_latent_day()).to_string(),
        },
    )?;
    let resolved = DeconvolveConfig {
        model: config.model.resolved()?,
        em: Some(em),
        ..config
    };
    out.finish(
        "deconvolve",
        to_value(&resolved),
        Vec::new(),
        ctx.threads,
        digests(&[&args.input])?,
    )?;
    Ok(())
}
