use std::path::PathBuf;

use chrono::NaiveDate;
use clap::Args;
use serde::Serialize;

use renewal_mcmc_core::preprocess::smooth_detections;
use renewal_mcmc_core::rng::mix_seed;
use renewal_mcmc_core::sequential::{rolling_fit, QuantileRecord, RollingConfig, WindowReport, DEFAULT_WINDOW};
use renewal_mcmc_core::Error;

use super::digests;
use super::fit::{fit_window, WindowData};
use crate::config::{load, to_value, FitConfig, PRE_WINDOW_DAYS};
use crate::error::{CliError, CliResult};
use crate::io::{date_of, fmt_f64, quantile_headers, read_series, OutputDir};
use crate::Context;

#[derive(Debug, Clone, Args)]
pub struct SequentialArgs {
    /// Detection counts, CSV with header `date,count`
    #[arg(long)]
    pub input: PathBuf,
    /// Window length in days
    #[arg(long, default_value_t = DEFAULT_WINDOW)]
    pub window: usize,
    /// JSON config applied to every window, as for `fit`
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Random seed; window seeds are derived from it and the window's end
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Smooth the whole series once instead of each window separately
    #[arg(long)]
    pub smooth_full: bool,
    /// Directory receiving history_R.csv, history_I.csv, window diagnostics and the manifest
    #[arg(long)]
    pub output_dir: PathBuf,
}

#[derive(Debug, Serialize)]
struct WindowDiagnostics {
    window_start_date: String,
    window_end_date: String,
    #[serde(flatten)]
    report: WindowReport,
}

#[derive(Debug, Serialize)]
struct Resolved {
    window: usize,
    transition_span: usize,
    smooth_full: bool,
    fit: FitConfig,
}

fn history_rows(first: NaiveDate, records: &[QuantileRecord]) -> Vec<Vec<String>> {
    records
        .iter()
        .map(|r| {
            let mut row = vec![date_of(first, r.day).to_string()];
            row.extend(r.values.iter().map(|x| fmt_f64(*x)));
            row.push(date_of(first, r.source_window_end).to_string());
            row
        })
        .collect()
}

fn to_core(e: CliError) -> Error {
    match e {
        CliError::Numerical(m) => Error::Numerical(m),
        other => Error::Data(other.to_string()),
    }
}

pub fn run(args: &SequentialArgs, ctx: &Context) -> CliResult<()> {
    let config: FitConfig = load(args.config.as_deref())?;
    config.validate()?;
    if args.window < 2 {
        return Err(CliError::Usage(format!(
            "--window must be at least 2, got {}",
            args.window
        )));
    }
    let series = read_series(&args.input)?;
    if series.len() < args.window {
        return Err(CliError::Data(format!(
            "series has {} days, fewer than the window length {}",
            series.len(),
            args.window
        )));
    }
    let first = series.first_date();
    let stream = match (&config.smoothing, args.smooth_full) {
        (Some(s), true) => Some(smooth_detections(&series.counts, s)?.smoothed),
        _ => None,
    };
    let rolling = RollingConfig::new(args.window, config.quantiles.clone());
    let n_windows = series.len() - args.window + 1;
    let fit = |input: renewal_mcmc_core::sequential::WindowInput<'_>| {
        let start = input.end as usize - args.window;
        log::info!(
            "window {}/{} ending {}",
            start + 1,
            n_windows,
            series.dates[input.end as usize - 1]
        );
        let data = WindowData {
            first: series.dates[start],
            raw: &series.counts[start..input.end as usize],
            smoothed: stream.as_ref().map(|_| input.raw),
            pre_window: (start >= PRE_WINDOW_DAYS).then(|| &series.counts[start - PRE_WINDOW_DAYS..start]),
            carried: input.carried_lambda0,
        };
        fit_window(&config, data, mix_seed(args.seed, input.end as u64), ctx)
            .map(|f| f.samples)
            .map_err(to_core)
    };
    let result = rolling_fit(stream.as_deref().unwrap_or(&series.counts), &rolling, fit)?;
    let failed = result.reports.iter().filter(|r| !r.succeeded).count();
    if failed > 0 {
        log::warn!("{failed} of {} windows failed", result.reports.len());
    }
    let Some(history) = &result.history else {
        let first_error = result.reports.iter().find_map(|r| r.error.clone()).unwrap_or_default();
        return Err(CliError::Numerical(format!(
            "every window failed; first error: {first_error}"
        )));
    };

    let mut out = OutputDir::create(&args.output_dir)?;
    let mut header = vec!["date".to_string()];
    header.extend(quantile_headers(&config.quantiles));
    header.push("source_window_end".into());
    out.write_csv("history_R.csv", &header, &history_rows(first, &history.r))?;
    out.write_csv("history_I.csv", &header, &history_rows(first, &history.infections))?;
    let windows: Vec<WindowDiagnostics> = result
        .reports
        .iter()
        .map(|r| WindowDiagnostics {
            window_start_date: date_of(first, r.window_end - args.window as i64 + 1).to_string(),
            window_end_date: date_of(first, r.window_end).to_string(),
            report: r.clone(),
        })
        .collect();
    out.write_json("windows.json", &windows)?;
    let resolved = Resolved {
        window: args.window,
        transition_span: rolling.transition_span,
        smooth_full: args.smooth_full,
        fit: config.resolved()?,
    };
    let mut inputs = vec![args.input.as_path()];
    if let Some(c) = &args.config {
        inputs.push(c);
    }
    out.finish(
        "sequential",
        to_value(&resolved),
        vec![args.seed],
        ctx.threads,
        digests(&inputs)?,
    )?;
    Ok(())
}
