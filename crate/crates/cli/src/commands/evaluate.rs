use std::path::PathBuf;

use clap::Args;
use rayon::prelude::*;
use serde::Serialize;

use renewal_mcmc_core::evaluation::{aggregate, run_replicate, ExperimentConfig, ReplicateResult, PROBS};

use super::digests;
use crate::config::{load, to_value};
use crate::error::{CliError, CliResult};
use crate::io::{fmt_f64, quantile_headers, OutputDir};
use crate::Context;

#[derive(Debug, Clone, Args)]
pub struct EvaluateArgs {
    /// JSON experiment config; defaults when omitted
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Directory receiving metrics.csv, metrics_summary.csv, per-replicate quantiles and the manifest
    #[arg(long)]
    pub output_dir: PathBuf,
}

#[derive(Debug, Serialize)]
struct Report<'a> {
    n_replicates: usize,
    n_effective: usize,
    evaluation_days: &'a [i64],
    failures: &'a [String],
    warnings: Vec<(usize, &'a [String])>,
}

fn replicate_rows(rep: &ReplicateResult, truth_r: &[f64], first_day: i64) -> Vec<Vec<String>> {
    let mut rows = Vec::new();
    for est in &rep.estimates {
        for (variable, table) in [("R", &est.r), ("I", &est.infections)] {
            for (j, q) in table.iter().enumerate() {
                let truth = match variable {
                    "R" => truth_r[j],
                    _ => rep.truth_infections[j] as f64,
                };
                let mut row = vec![
                    est.label.clone(),
                    variable.to_string(),
                    (first_day + j as i64).to_string(),
                ];
                match q {
                    Some(q) => row.extend(q.iter().map(|x| fmt_f64(*x))),
                    None => row.extend(PROBS.iter().map(|_| "NA".to_string())),
                }
                row.push(fmt_f64(truth));
                rows.push(row);
            }
        }
    }
    for (t, d) in rep.detections.iter().enumerate() {
        let mut row = vec!["observed".into(), "D".into(), (t + 1).to_string()];
        row.extend(PROBS.iter().map(|_| "NA".to_string()));
        row.push(d.to_string());
        rows.push(row);
    }
    rows
}

pub fn run(args: &EvaluateArgs, ctx: &Context) -> CliResult<()> {
    let config: ExperimentConfig = load(args.config.as_deref())?;
    let setup = config.setup().map_err(|e| CliError::at("", e))?;
    log::info!(
        "{} replicates of T = {} on {} threads",
        config.n_replicates,
        config.t,
        ctx.threads
    );
    let results: Vec<_> = ctx.pool.install(|| {
        (0..config.n_replicates)
            .into_par_iter()
            .map(|i| {
                let r = run_replicate(&config, &setup, i);
                log::info!("replicate {i} done");
                r
            })
            .collect()
    });
    let mut replicates = Vec::new();
    let mut failures = Vec::new();
    for (i, r) in results.into_iter().enumerate() {
        match r {
            Ok(r) => replicates.push(r),
            Err(e) => {
                log::warn!("replicate {i} failed: {e}");
                failures.push(format!("replicate {i}: {e}"));
            }
        }
    }
    let table = aggregate(&config, &setup, &replicates, failures)?;

    let mut out = OutputDir::create(&args.output_dir)?;
    let header: Vec<String> = ["method", "variable", "metric", "day", "value"]
        .map(String::from)
        .to_vec();
    let rows: Vec<Vec<String>> = table
        .rows
        .iter()
        .map(|r| {
            vec![
                r.method.clone(),
                r.variable.clone(),
                r.metric.clone(),
                r.day.to_string(),
                fmt_f64(r.value),
            ]
        })
        .collect();
    out.write_csv("metrics.csv", &header, &rows)?;
    let header: Vec<String> = ["method", "variable", "rmse", "interval_score", "coverage"]
        .map(String::from)
        .to_vec();
    let rows: Vec<Vec<String>> = table
        .summary
        .iter()
        .map(|s| {
            vec![
                s.method.clone(),
                s.variable.clone(),
                fmt_f64(s.rmse),
                fmt_f64(s.interval_score),
                fmt_f64(s.coverage),
            ]
        })
        .collect();
    out.write_csv("metrics_summary.csv", &header, &rows)?;
    let mut header: Vec<String> = ["method", "variable", "day"].map(String::from).to_vec();
    header.extend(quantile_headers(&PROBS));
    header.push("truth".into());
    let first_day = setup.layout.first_latent_day();
    for rep in &replicates {
        out.write_csv(
            &format!("replicates/replicate_{:04}.csv", rep.index),
            &header,
            &replicate_rows(rep, &setup.truth_r, first_day),
        )?;
    }
    out.write_json(
        "evaluation.json",
        &Report {
            n_replicates: config.n_replicates,
            n_effective: table.n_effective,
            evaluation_days: &table.days,
            failures: &table.failures,
            warnings: replicates
                .iter()
                .filter(|r| !r.warnings.is_empty())
                .map(|r| (r.index, r.warnings.as_slice()))
                .collect(),
        },
    )?;
    let mut resolved = config.clone();
    resolved.truth_r = Some(setup.truth_r.clone());
    resolved.profile = Some(setup.profile.weights().to_vec());
    resolved.delay = Some(setup.delay.probs().to_vec());
    let inputs = match &args.config {
        Some(p) => digests(&[p])?,
        None => Vec::new(),
    };
    out.finish("evaluate", to_value(&resolved), vec![config.seed], ctx.threads, inputs)?;
    Ok(())
}
