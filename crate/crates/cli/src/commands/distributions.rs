use std::io::Write;
use std::path::PathBuf;

use clap::{Args, ValueEnum};
use serde::Serialize;

use renewal_mcmc_core::distributions::{
    convolve_gamma_delay, discretize_gamma, DELAY_HORIZON, INCUBATION_MEAN, INCUBATION_SD, PROFILE_HORIZON,
    PROFILE_MEAN, PROFILE_SD, REPORTING_MEAN, REPORTING_SD,
};

use crate::config::to_value;
use crate::error::{CliError, CliResult};
use crate::io::{csv_bytes, fmt_f64, OutputDir};
use crate::Context;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Table {
    Profile,
    Delay,
    Both,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct DistributionsArgs {
    /// Mean of the Gamma infectivity profile (days)
    #[arg(long, default_value_t = PROFILE_MEAN, allow_negative_numbers = true)]
    pub profile_mean: f64,
    /// Standard deviation of the Gamma infectivity profile (days)
    #[arg(long, default_value_t = PROFILE_SD, allow_negative_numbers = true)]
    pub profile_sd: f64,
    /// Largest lag of the infectivity profile
    #[arg(long, default_value_t = PROFILE_HORIZON)]
    pub k_max: usize,
    /// Mean of the Gamma incubation period (days)
    #[arg(long, default_value_t = INCUBATION_MEAN, allow_negative_numbers = true)]
    pub incubation_mean: f64,
    /// Standard deviation of the Gamma incubation period (days)
    #[arg(long, default_value_t = INCUBATION_SD, allow_negative_numbers = true)]
    pub incubation_sd: f64,
    /// Mean of the Gamma onset-to-report delay (days)
    #[arg(long, default_value_t = REPORTING_MEAN, allow_negative_numbers = true)]
    pub reporting_mean: f64,
    /// Standard deviation of the Gamma onset-to-report delay (days)
    #[arg(long, default_value_t = REPORTING_SD, allow_negative_numbers = true)]
    pub reporting_sd: f64,
    /// Largest lag of the detection delay
    #[arg(long, default_value_t = DELAY_HORIZON)]
    pub delay_k_max: usize,
    /// Which table to emit
    #[arg(long, value_enum, default_value_t = Table::Both)]
    pub table: Table,
    /// Write profile.csv and delay.csv here instead of printing one CSV to stdout
    #[arg(long)]
    pub output_dir: Option<PathBuf>,
}

fn check_positive(flag: &str, x: f64) -> CliResult<()> {
    if x > 0.0 && x.is_finite() {
        Ok(())
    } else {
        Err(CliError::Usage(format!(
            "--{flag} must be a finite number > 0, got {x}"
        )))
    }
}

fn check_lags(flag: &str, k: usize) -> CliResult<()> {
    if k >= 1 {
        Ok(())
    } else {
        Err(CliError::Usage(format!("--{flag} must be at least 1")))
    }
}

impl DistributionsArgs {
    pub fn validate(&self) -> CliResult<()> {
        check_positive("profile-mean", self.profile_mean)?;
        check_positive("profile-sd", self.profile_sd)?;
        check_lags("k-max", self.k_max)?;
        check_positive("incubation-mean", self.incubation_mean)?;
        check_positive("incubation-sd", self.incubation_sd)?;
        check_positive("reporting-mean", self.reporting_mean)?;
        check_positive("reporting-sd", self.reporting_sd)?;
        check_lags("delay-k-max", self.delay_k_max)
    }
}

/// The requested tables as `(name, probabilities)`.
pub fn tables(args: &DistributionsArgs) -> CliResult<Vec<(&'static str, Vec<f64>)>> {
    args.validate()?;
    let mut out = Vec::new();
    if matches!(args.table, Table::Profile | Table::Both) {
        out.push((
            "profile",
            discretize_gamma(args.profile_mean, args.profile_sd, args.k_max)?,
        ));
    }
    if matches!(args.table, Table::Delay | Table::Both) {
        let kernel = convolve_gamma_delay(
            args.incubation_mean,
            args.incubation_sd,
            args.reporting_mean,
            args.reporting_sd,
            args.delay_k_max,
        )?;
        out.push(("delay", kernel.probs().to_vec()));
    }
    Ok(out)
}

fn rows(p: &[f64]) -> Vec<Vec<String>> {
    p.iter()
        .enumerate()
        .map(|(i, x)| vec![(i + 1).to_string(), fmt_f64(*x), fmt_f64(1000.0 * x)])
        .collect()
}

pub fn run(args: &DistributionsArgs, ctx: &Context) -> CliResult<()> {
    let tables = tables(args)?;
    match &args.output_dir {
        None => {
            let header: Vec<String> = ["table", "k", "probability", "per_mille"].map(String::from).to_vec();
            let mut all = Vec::new();
            for (name, p) in &tables {
                all.extend(rows(p).into_iter().map(|r| {
                    let mut row = vec![name.to_string()];
                    row.extend(r);
                    row
                }));
            }
            let bytes = csv_bytes(&header, &all)?;
            std::io::stdout()
                .write_all(&bytes)
                .map_err(|e| CliError::io("cannot write to stdout", e))
        }
        Some(dir) => {
            let mut out = OutputDir::create(dir)?;
            let header: Vec<String> = ["k", "probability", "per_mille"].map(String::from).to_vec();
            for (name, p) in &tables {
                out.write_csv(&format!("{name}.csv"), &header, &rows(p))?;
            }
            out.finish("distributions", to_value(args), Vec::new(), ctx.threads, Vec::new())?;
            Ok(())
        }
    }
}
