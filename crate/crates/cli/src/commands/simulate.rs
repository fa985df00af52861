use std::path::PathBuf;

use clap::Args;

use renewal_mcmc_core::evaluation::default_truth_r;
use renewal_mcmc_core::model::simulate_path;
use renewal_mcmc_core::rng::{poisson, stream_rng, streams};
use renewal_mcmc_core::window::Layout;

use super::digests;
use crate::config::{load, to_value, SimulateConfig};
use crate::error::{CliError, CliResult};
use crate::io::{date_of, fmt_f64, OutputDir};
use crate::Context;

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    /// JSON config (model, t, start_date, r, lambda0, divergence_cap); defaults when omitted
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Random seed
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Directory receiving path.csv, detections.csv and the manifest
    #[arg(long)]
    pub output_dir: PathBuf,
}

pub fn run(args: &SimulateArgs, ctx: &Context) -> CliResult<()> {
    let config: SimulateConfig = load(args.config.as_deref())?;
    config.validate()?;
    let profile = config.model.profile()?;
    let delay = config.model.delay_for(config.start_date)?;
    let layout = Layout::for_models(config.t, &profile, delay.model())?;
    let r = match &config.r {
        Some(r) if r.len() != layout.n_latent() => {
            return Err(CliError::Config(format!(
                "/r: expected {} values (days {} to {}), found {}",
                layout.n_latent(),
                layout.first_latent_day(),
                layout.last_latent_day(),
                r.len()
            )))
        }
        Some(r) => r.clone(),
        None => default_truth_r(layout.n_latent()),
    };
    let mut rng = stream_rng(args.seed, streams::SIMULATION);
    let init: Vec<u64> = (0..layout.k_w).map(|_| poisson(&mut rng, config.lambda0)).collect();
    let path = simulate_path(
        config.t,
        &r,
        &init,
        &profile,
        delay.model(),
        config.divergence_cap,
        &mut rng,
    )?;

    let first = config.start_date;
    let mut out = OutputDir::create(&args.output_dir)?;
    let mut rows: Vec<Vec<String>> = (0..layout.n_total())
        .map(|i| {
            let day = layout.total_day(i);
            let r = if day >= layout.first_latent_day() {
                fmt_f64(path.r[layout.latent_index(day)])
            } else {
                String::new()
            };
            let d = if day >= 1 {
                path.detections[(day - 1) as usize].to_string()
            } else {
                String::new()
            };
            vec![date_of(first, day).to_string(), r, path.infections[i].to_string(), d]
        })
        .collect();
    // Day T carries detections only.
    let t = config.t as i64;
    rows.push(vec![
        date_of(first, t).to_string(),
        String::new(),
        String::new(),
        path.detections[config.t - 1].to_string(),
    ]);
    out.write_csv("path.csv", &["date".into(), "R".into(), "I".into(), "D".into()], &rows)?;
    let rows: Vec<Vec<String>> = path
        .detections
        .iter()
        .enumerate()
        .map(|(i, d)| vec![date_of(first, i as i64 + 1).to_string(), d.to_string()])
        .collect();
    out.write_csv("detections.csv", &["date".into(), "count".into()], &rows)?;
    let inputs = match &args.config {
        Some(p) => digests(&[p])?,
        None => Vec::new(),
    };
    let resolved = SimulateConfig {
        r: Some(r),
        ..config.resolved()?
    };
    out.finish("simulate", to_value(&resolved), vec![args.seed], ctx.threads, inputs)?;
    Ok(())
}
