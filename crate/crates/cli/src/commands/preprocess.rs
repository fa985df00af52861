use std::path::PathBuf;

use clap::Args;
use serde::Serialize;

use renewal_mcmc_core::preprocess::{
    smooth_detections, weekday_effect_estimates, SeasonalMode, SmoothingConfig, DEFAULT_TREND_WINDOW,
};

use super::{digests, flag_error};
use crate::config::to_value;
use crate::error::{CliError, CliResult};
use crate::io::{fmt_f64, read_series, weekday_index, OutputDir, WEEKDAY_NAMES};
use crate::Context;

#[derive(Debug, Clone, Args, Serialize)]
pub struct PreprocessArgs {
    /// Detection counts, CSV with header `date,count`
    #[arg(long)]
    pub input: PathBuf,
    /// Directory receiving smoothed.csv, weekday_effects.csv and the manifest
    #[arg(long)]
    pub output_dir: PathBuf,
    /// Loess span of the trend (odd)
    #[arg(long, default_value_t = DEFAULT_TREND_WINDOW)]
    pub trend_window: usize,
    /// Weekday pattern: `periodic`, or an odd span in weeks for a slowly changing pattern
    #[arg(long, default_value = "periodic", value_parser = parse_seasonal)]
    #[serde(skip)]
    pub seasonal: SeasonalMode,
    /// Downweight outliers with bisquare robustness passes
    #[arg(long, default_value_t = true, num_args = 0..=1, default_missing_value = "true", action = clap::ArgAction::Set)]
    pub robust: bool,
    /// Offset added before taking logs; needed when counts contain zeros
    #[arg(long, allow_negative_numbers = true)]
    pub zero_offset: Option<f64>,
}

pub fn parse_seasonal(s: &str) -> Result<SeasonalMode, String> {
    if s == "periodic" {
        return Ok(SeasonalMode::Periodic);
    }
    match s.parse::<usize>() {
        Ok(n) if n >= 1 && n % 2 == 1 => Ok(SeasonalMode::Window(n)),
        _ => Err(format!("expected `periodic` or an odd positive span, got `{s}`")),
    }
}

impl PreprocessArgs {
    pub fn smoothing(&self) -> CliResult<SmoothingConfig> {
        if self.trend_window < 3 || self.trend_window % 2 == 0 {
            return Err(CliError::Usage(format!(
                "--trend-window must be an odd number >= 3, got {}",
                self.trend_window
            )));
        }
        if let Some(c) = self.zero_offset {
            if !(c > 0.0) || !c.is_finite() {
                return Err(CliError::Usage(format!("--zero-offset must be > 0, got {c}")));
            }
        }
        Ok(SmoothingConfig {
            trend_window: self.trend_window,
            seasonal: self.seasonal,
            robust: self.robust,
            zero_offset: self.zero_offset,
        })
    }
}

pub fn run(args: &PreprocessArgs, ctx: &Context) -> CliResult<()> {
    let config = args.smoothing()?;
    let series = read_series(&args.input)?;
    let sm = smooth_detections(&series.counts, &config).map_err(flag_error)?;
    let effects = weekday_effect_estimates(&series.counts, &config, weekday_index(series.first_date()) as usize)
        .map_err(flag_error)?;
    let mut out = OutputDir::create(&args.output_dir)?;
    let header: Vec<String> = ["date", "raw", "smoothed", "weekday_effect", "remainder"]
        .map(String::from)
        .to_vec();
    let d = &sm.decomposition;
    let rows: Vec<Vec<String>> = (0..series.len())
        .map(|i| {
            vec![
                series.dates[i].to_string(),
                fmt_f64(series.counts[i]),
                fmt_f64(sm.smoothed[i]),
                fmt_f64(d.seasonal[i].exp()),
                fmt_f64(d.remainder[i].exp()),
            ]
        })
        .collect();
    out.write_csv("smoothed.csv", &header, &rows)?;
    let rows: Vec<Vec<String>> = WEEKDAY_NAMES
        .iter()
        .zip(effects)
        .map(|(name, e)| vec![name.to_string(), fmt_f64(e)])
        .collect();
    out.write_csv("weekday_effects.csv", &["weekday".into(), "effect".into()], &rows)?;
    let inputs = digests(&[&args.input])?;
    out.finish("preprocess", to_value(&config), Vec::new(), ctx.threads, inputs)?;
    Ok(())
}
