//! Simulation experiments: ground truth, repeated fits, scores, a two-step
//! baseline, and calibration checks for the sampler.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use rand::Rng;
use serde::{Deserialize, Serialize};

#[allow(unused_imports)] // shadowed by inherent methods when std is linked
use num_traits::Float;

use crate::deconvolution::{em_deconvolve, expected_detections, DeconvolutionConfig};
use crate::distributions::{DelayKernel, InfectivityProfile};
use crate::error::{Error, Result};
use crate::mcmc::{
    quantiles, run_mcmc, sample_prior_log_r, Hyperparams, McmcConfig, PosteriorSamples, Problem, DEFAULT_SIGMA,
    DEFAULT_TAU,
};
use crate::model::{simulate_path, DEFAULT_DIVERGENCE_CAP};
use crate::preprocess::{smooth_detections, SmoothingConfig};
use crate::rng::{mix_seed, poisson, stream_rng, streams, uniform};
use crate::sequential::{rolling_fit, RollingConfig, WindowInput};
use crate::window::{Layout, WindowDelay};

/// Central 95% interval.
pub const PROBS: [f64; 3] = [0.025, 0.5, 0.975];
/// Label of the two-step baseline; a simplified stand-in, not the full reference pipeline.
pub const BASELINE_LABEL: &str = "baseline_two_step_simplified";

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreConvention {
    /// Violations weighted by `α/2`, with `α` the nominal coverage.
    #[default]
    Paper,
    /// Violations weighted by `2/(1-α)`.
    Standard,
}

/// Interval score of `[l, u]` for the outcome `x` at nominal coverage `alpha`.
pub fn interval_score(l: f64, u: f64, x: f64, alpha: f64, convention: ScoreConvention) -> Result<f64> {
    if !(l <= u) {
        return Err(Error::param("interval", format!("lower end {l} exceeds upper end {u}")));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::param("alpha", "must lie in (0, 1)"));
    }
    let weight = match convention {
        ScoreConvention::Paper => alpha / 2.0,
        ScoreConvention::Standard => 2.0 / (1.0 - alpha),
    };
    let below = if x < l { l - x } else { 0.0 };
    let above = if x > u { x - u } else { 0.0 };
    Ok((u - l) + weight * (below + above))
}

pub fn rmse(estimates: &[f64], truth: &[f64]) -> Result<f64> {
    if estimates.len() != truth.len() {
        return Err(Error::Dimension {
            what: "estimates",
            expected: truth.len(),
            found: estimates.len(),
        });
    }
    if estimates.is_empty() {
        return Err(Error::param("estimates", "no overlapping days"));
    }
    let sq: f64 = estimates.iter().zip(truth).map(|(e, t)| (e - t) * (e - t)).sum();
    Ok((sq / estimates.len() as f64).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KsResult {
    pub statistic: f64,
    pub p_value: f64,
}

/// One-sample Kolmogorov–Smirnov test against the uniform distribution on
/// `[0, 1]`, with the asymptotic p-value.
pub fn ks_uniform(values: &[f64]) -> Result<KsResult> {
    if values.is_empty() {
        return Err(Error::param("values", "no values to test"));
    }
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len() as f64;
    let d = v
        .iter()
        .enumerate()
        .map(|(i, x)| {
            let x = x.clamp(0.0, 1.0);
            ((i as f64 + 1.0) / n - x).max(x - i as f64 / n)
        })
        .fold(0.0, f64::max);
    let lambda = (n.sqrt() + 0.12 + 0.11 / n.sqrt()) * d;
    Ok(KsResult {
        statistic: d,
        p_value: kolmogorov_survival(lambda),
    })
}

/// `P(K > λ)` for the Kolmogorov distribution.
pub fn kolmogorov_survival(lambda: f64) -> f64 {
    if lambda < 0.2 {
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..=100 {
        let kf = k as f64;
        let term = (-2.0 * kf * kf * lambda * lambda).exp();
        sum += if k % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BaselineConfig {
    /// Days over which `R` is held constant.
    pub window_r: usize,
    pub n_boot: usize,
    /// Length of resampled residual blocks.
    pub block: usize,
    pub max_em_iters: usize,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        BaselineConfig {
            window_r: 4,
            n_boot: 100,
            block: 7,
            max_em_iters: 10_000,
        }
    }
}

/// Two-step estimates on the latent days: EM deconvolution followed by a
/// sliding-window ratio estimator of `R`, with block-bootstrap intervals.
/// A simplified stand-in for established two-step pipelines.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BaselineTable {
    pub first_day: i64,
    pub probs: Vec<f64>,
    /// `None` where `R̂` is undefined.
    pub r: Vec<Option<Vec<f64>>>,
    pub infections: Vec<Vec<f64>>,
    /// Estimates from the original series.
    pub r_point: Vec<Option<f64>>,
    pub infections_point: Vec<f64>,
}

/// `R̂_t = Σ Î_s / Σ κ̂_s` over the `window_r` days ending on each latent day.
pub fn ratio_estimates(infections: &[f64], weights: &[f64], window_r: usize) -> Vec<Option<f64>> {
    let k_w = weights.len();
    let n = infections.len();
    let kappa: Vec<Option<f64>> = (0..n)
        .map(|j| (j >= k_w).then(|| weights.iter().enumerate().map(|(k, w)| w * infections[j - 1 - k]).sum()))
        .collect();
    (0..n)
        .map(|j| {
            if j + 1 < window_r {
                return None;
            }
            let mut num = 0.0;
            let mut den = 0.0;
            for s in j + 1 - window_r..=j {
                num += infections[s];
                den += kappa[s]?;
            }
            (den > 0.0).then(|| num / den)
        })
        .collect()
}

fn deconvolve(detections: &[f64], delay: &WindowDelay, max_iters: usize) -> Result<Vec<f64>> {
    let mut config = DeconvolutionConfig::for_length(detections.len());
    config.max_iters = max_iters;
    Ok(em_deconvolve(detections, delay, &config)?.estimate)
}

pub fn baseline_two_step(
    detections: &[f64],
    delay: &WindowDelay,
    profile: &InfectivityProfile,
    config: &BaselineConfig,
    probs: &[f64],
    seed: u64,
) -> Result<BaselineTable> {
    if config.window_r == 0 {
        return Err(Error::param("window_r", "must be at least 1"));
    }
    if config.block == 0 {
        return Err(Error::param("block", "must be at least 1"));
    }
    crate::mcmc::check_probs(probs)?;
    let weights = profile.weights();
    let point = deconvolve(detections, delay, config.max_em_iters)?;
    let r_point = ratio_estimates(&point, weights, config.window_r);
    let n = point.len();
    let t = detections.len();

    let fitted = expected_detections(&point, delay)?;
    let residuals: Vec<f64> = detections.iter().zip(&fitted).map(|(d, e)| d - e).collect();
    let block = config.block.min(t);
    let mut rng = stream_rng(seed, streams::BOOTSTRAP);
    let mut r_draws: Vec<Vec<f64>> = vec![Vec::new(); n];
    let mut r_missing = vec![false; n];
    let mut i_draws: Vec<Vec<f64>> = vec![Vec::new(); n];
    let mut resampled = vec![0.0; t];
    for _ in 0..config.n_boot {
        let mut filled = 0;
        while filled < t {
            let start = rng.random_range(0..=t - block);
            for k in 0..block.min(t - filled) {
                resampled[filled + k] = residuals[start + k];
            }
            filled += block;
        }
        let boot: Vec<f64> = fitted.iter().zip(&resampled).map(|(e, r)| (e + r).max(0.0)).collect();
        let est = deconvolve(&boot, delay, config.max_em_iters)?;
        for (j, r) in ratio_estimates(&est, weights, config.window_r).into_iter().enumerate() {
            match r {
                Some(v) => r_draws[j].push(v),
                None => r_missing[j] = true,
            }
        }
        for (j, v) in est.into_iter().enumerate() {
            i_draws[j].push(v);
        }
    }
    let summarize = |mut v: Vec<f64>, fallback: f64| -> Result<Vec<f64>> {
        if v.is_empty() {
            Ok(vec![fallback; probs.len()])
        } else {
            quantiles(&mut v, probs)
        }
    };
    let mut r = Vec::with_capacity(n);
    for j in 0..n {
        r.push(match (r_point[j], r_missing[j]) {
            (Some(p), false) => Some(summarize(core::mem::take(&mut r_draws[j]), p)?),
            _ => None,
        });
    }
    let infections = i_draws
        .into_iter()
        .zip(&point)
        .map(|(v, p)| summarize(v, *p))
        .collect::<Result<Vec<_>>>()?;
    Ok(BaselineTable {
        first_day: delay.layout().first_latent_day(),
        probs: probs.to_vec(),
        r,
        infections,
        r_point,
        infections_point: point,
    })
}

/// Smooth reference path of `R` over `n` days: starts near 1.2, dips below 1,
/// rises above 1.3 and declines below 1.
pub fn default_truth_r(n: usize) -> Vec<f64> {
    const KNOTS: [(f64, f64); 5] = [(0.0, 1.2), (0.22, 0.92), (0.5, 1.35), (0.75, 1.1), (1.0, 0.8)];
    (0..n)
        .map(|i| {
            let x = if n > 1 { i as f64 / (n - 1) as f64 } else { 0.0 };
            let seg = KNOTS.windows(2).find(|w| x <= w[1].0).unwrap_or(&KNOTS[3..5]);
            let (x0, y0) = seg[0];
            let (x1, y1) = seg[1];
            let f = (1.0 - (core::f64::consts::PI * (x - x0) / (x1 - x0)).cos()) / 2.0;
            y0 + f * (y1 - y0)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Mcmc,
    Baseline,
    /// Rolling windows of length `window`; day `s` is estimated from the
    /// window ending on `s + offset`, one series per offset.
    Sequential {
        window: usize,
        offsets: Vec<usize>,
    },
}

impl Method {
    pub fn labels(&self) -> Vec<String> {
        match self {
            Method::Mcmc => vec!["mcmc".into()],
            Method::Baseline => vec![BASELINE_LABEL.into()],
            Method::Sequential { offsets, .. } => offsets.iter().map(|o| format!("sequential_s{o}")).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    /// `R` on the latent days `1-K_m..=T-1`; [`default_truth_r`] when absent.
    pub truth_r: Option<Vec<f64>>,
    pub n_replicates: usize,
    pub t: usize,
    /// Prior mean of each initial day's infections, used to simulate and to fit.
    pub lambda0: f64,
    pub methods: Vec<Method>,
    pub seed: u64,
    pub sigma: f64,
    pub tau: f64,
    pub mcmc: McmcConfig,
    pub baseline: BaselineConfig,
    /// Applied identically before every method; raw counts when absent.
    pub smoothing: Option<SmoothingConfig>,
    pub convention: ScoreConvention,
    /// Infectivity weights; the reference profile when absent.
    pub profile: Option<Vec<f64>>,
    /// Delay probabilities; the reference kernel when absent.
    pub delay: Option<Vec<f64>>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            truth_r: None,
            n_replicates: 20,
            t: 63,
            lambda0: 100.0,
            methods: vec![Method::Mcmc, Method::Baseline],
            seed: 1,
            sigma: DEFAULT_SIGMA,
            tau: DEFAULT_TAU,
            mcmc: McmcConfig::default(),
            baseline: BaselineConfig::default(),
            smoothing: None,
            convention: ScoreConvention::Paper,
            profile: None,
            delay: None,
        }
    }
}

/// Resolved models and truth of an experiment.
#[derive(Debug, Clone)]
pub struct ExperimentSetup {
    pub profile: InfectivityProfile,
    pub delay: DelayKernel,
    pub layout: Layout,
    pub truth_r: Vec<f64>,
}

impl ExperimentConfig {
    pub fn setup(&self) -> Result<ExperimentSetup> {
        if self.n_replicates == 0 {
            return Err(Error::param("n_replicates", "must be at least 1"));
        }
        if self.methods.is_empty() {
            return Err(Error::param("methods", "no methods to evaluate"));
        }
        crate::error::ensure_positive("lambda0", self.lambda0)?;
        self.mcmc.validate()?;
        let profile = match &self.profile {
            Some(w) => InfectivityProfile::new(w.clone())?,
            None => InfectivityProfile::reference(),
        };
        let delay = match &self.delay {
            Some(m) => DelayKernel::new(m.clone())?,
            None => DelayKernel::reference(),
        };
        let layout = Layout::for_models(self.t, &profile, &delay)?;
        let truth_r = match &self.truth_r {
            Some(r) => {
                if r.len() != layout.n_latent() {
                    return Err(Error::Dimension {
                        what: "truth_r",
                        expected: layout.n_latent(),
                        found: r.len(),
                    });
                }
                r.clone()
            }
            None => default_truth_r(layout.n_latent()),
        };
        for m in &self.methods {
            if let Method::Sequential { window, offsets } = m {
                if *window > self.t || *window < 2 {
                    return Err(Error::param(
                        "methods",
                        format!("sequential window {window} does not fit T = {}", self.t),
                    ));
                }
                if offsets.is_empty() {
                    return Err(Error::param("methods", "sequential method needs at least one offset"));
                }
            }
        }
        Ok(ExperimentSetup {
            profile,
            delay,
            layout,
            truth_r,
        })
    }
}

/// Quantiles of one method on the latent days; `None` where it reports nothing.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MethodEstimate {
    pub label: String,
    pub r: Vec<Option<Vec<f64>>>,
    pub infections: Vec<Option<Vec<f64>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReplicateResult {
    pub index: usize,
    pub truth_infections: Vec<u64>,
    pub detections: Vec<u64>,
    pub estimates: Vec<MethodEstimate>,
    /// Diagnostics per MCMC fit.
    pub warnings: Vec<String>,
}

fn from_samples(label: &str, samples: &PosteriorSamples) -> Result<MethodEstimate> {
    let q = crate::mcmc::posterior_quantiles(samples, &PROBS)?;
    Ok(MethodEstimate {
        label: label.to_string(),
        r: q.r.into_iter().map(Some).collect(),
        infections: q.infections.into_iter().map(Some).collect(),
    })
}

/// Simulates replicate `index` and fits every configured method.
pub fn run_replicate(config: &ExperimentConfig, setup: &ExperimentSetup, index: usize) -> Result<ReplicateResult> {
    let layout = setup.layout;
    let mut rng = stream_rng(config.seed, streams::REPLICATE + index as u64);
    let init: Vec<u64> = (0..layout.k_w).map(|_| poisson(&mut rng, config.lambda0)).collect();
    let path = simulate_path(
        layout.t,
        &setup.truth_r,
        &init,
        &setup.profile,
        &setup.delay,
        DEFAULT_DIVERGENCE_CAP,
        &mut rng,
    )?;
    let raw: Vec<f64> = path.detections.iter().map(|&d| d as f64).collect();
    let series = match &config.smoothing {
        Some(s) => smooth_detections(&raw, s)?.smoothed,
        None => raw.clone(),
    };
    let fit_seed = mix_seed(config.seed, index as u64);
    let mut estimates = Vec::new();
    let mut warnings = Vec::new();
    for method in &config.methods {
        match method {
            Method::Mcmc => {
                let hyper = Hyperparams::new(config.sigma, config.tau, vec![config.lambda0; layout.k_w])?;
                let problem = Problem::new(&series, &setup.profile, &setup.delay, hyper)?;
                let samples = run_mcmc(&problem, &config.mcmc, fit_seed)?;
                warnings.extend(samples.warnings.iter().cloned());
                estimates.push(from_samples("mcmc", &samples)?);
            }
            Method::Baseline => {
                let wd = WindowDelay::new(layout, &setup.delay)?;
                let b = baseline_two_step(&series, &wd, &setup.profile, &config.baseline, &PROBS, fit_seed)?;
                estimates.push(MethodEstimate {
                    label: BASELINE_LABEL.into(),
                    r: b.r,
                    infections: b.infections.into_iter().map(Some).collect(),
                });
            }
            Method::Sequential { window, offsets } => {
                estimates.extend(sequential_estimates(
                    config,
                    setup,
                    &series,
                    *window,
                    offsets,
                    fit_seed,
                    &mut warnings,
                )?);
            }
        }
    }
    Ok(ReplicateResult {
        index,
        truth_infections: path.latent_infections().to_vec(),
        detections: path.detections,
        estimates,
        warnings,
    })
}

fn sequential_estimates(
    config: &ExperimentConfig,
    setup: &ExperimentSetup,
    series: &[f64],
    window: usize,
    offsets: &[usize],
    seed: u64,
    warnings: &mut Vec<String>,
) -> Result<Vec<MethodEstimate>> {
    let k_w = setup.layout.k_w;
    let rolling = RollingConfig {
        keep_windows: true,
        ..RollingConfig::new(window, PROBS.to_vec())
    };
    let fit = |input: WindowInput<'_>| -> Result<PosteriorSamples> {
        let lambda0 = input.carried_lambda0.unwrap_or_else(|| vec![config.lambda0; k_w]);
        let hyper = Hyperparams::new(config.sigma, config.tau, lambda0)?;
        let problem = Problem::new(input.raw, &setup.profile, &setup.delay, hyper)?;
        run_mcmc(&problem, &config.mcmc, mix_seed(seed, input.end as u64))
    };
    let res = rolling_fit(series, &rolling, fit)?;
    for r in &res.reports {
        if let Some(e) = &r.error {
            warnings.push(format!("window ending on day {}: {e}", r.window_end));
        }
        warnings.extend(r.warnings.iter().cloned());
    }
    let n = setup.layout.n_latent();
    let first = setup.layout.first_latent_day();
    Ok(offsets
        .iter()
        .map(|&o| {
            let mut est = MethodEstimate {
                label: format!("sequential_s{o}"),
                r: vec![None; n],
                infections: vec![None; n],
            };
            for j in 0..n {
                let day = first + j as i64;
                let end = day + o as i64;
                if let Some(w) = res.windows.iter().find(|w| w.window_end == end) {
                    if day >= w.first_day && day <= w.last_day() {
                        let k = (day - w.first_day) as usize;
                        est.r[j] = Some(w.r[k].clone());
                        est.infections[j] = Some(w.infections[k].clone());
                    }
                }
            }
            est
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricRow {
    pub method: String,
    pub variable: String,
    pub metric: String,
    pub day: i64,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub method: String,
    pub variable: String,
    pub rmse: f64,
    pub interval_score: f64,
    pub coverage: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricTable {
    /// Days on which every method reports for every replicate.
    pub days: Vec<i64>,
    pub rows: Vec<MetricRow>,
    pub summary: Vec<SummaryRow>,
    pub n_effective: usize,
    pub failures: Vec<String>,
}

impl MetricTable {
    pub fn summary_for(&self, method: &str, variable: &str) -> Option<&SummaryRow> {
        self.summary
            .iter()
            .find(|s| s.method == method && s.variable == variable)
    }
}

/// Per-day and time-averaged metrics over the common evaluation days
/// `1..=T-1` on which all methods report.
pub fn aggregate(
    config: &ExperimentConfig,
    setup: &ExperimentSetup,
    replicates: &[ReplicateResult],
    failures: Vec<String>,
) -> Result<MetricTable> {
    if replicates.is_empty() {
        return Err(Error::Numerical(format!(
            "every replicate failed: {}",
            failures.join("; ")
        )));
    }
    let layout = setup.layout;
    let labels: Vec<String> = config.methods.iter().flat_map(|m| m.labels()).collect();
    let first = layout.first_latent_day();
    let reports = |j: usize| {
        replicates.iter().all(|rep| {
            labels.iter().all(|l| {
                rep.estimates
                    .iter()
                    .find(|e| &e.label == l)
                    .is_some_and(|e| e.r[j].is_some() && e.infections[j].is_some())
            })
        })
    };
    let days: Vec<usize> = (0..layout.n_latent())
        .filter(|&j| first + j as i64 >= 1)
        .filter(|&j| reports(j))
        .collect();
    if days.is_empty() {
        return Err(Error::param("methods", "the methods share no evaluation days"));
    }
    let alpha = PROBS[2] - PROBS[0];
    let mut rows = Vec::new();
    let mut summary = Vec::new();
    for label in &labels {
        for variable in ["R", "I"] {
            let mut per_day = [Vec::new(), Vec::new(), Vec::new()];
            for &j in &days {
                let (mut sq, mut score, mut hit) = (0.0, 0.0, 0.0);
                for rep in replicates {
                    let est = rep.estimates.iter().find(|e| &e.label == label).expect("checked above");
                    let (q, truth) = match variable {
                        "R" => (est.r[j].as_ref().expect("checked above"), setup.truth_r[j]),
                        _ => (
                            est.infections[j].as_ref().expect("checked above"),
                            rep.truth_infections[j] as f64,
                        ),
                    };
                    sq += (q[1] - truth) * (q[1] - truth);
                    score += interval_score(q[0], q[2], truth, alpha, config.convention)?;
                    hit += (q[0] <= truth && truth <= q[2]) as u8 as f64;
                }
                let n = replicates.len() as f64;
                per_day[0].push((sq / n).sqrt());
                per_day[1].push(score / n);
                per_day[2].push(hit / n);
            }
            for (metric, values) in ["rmse", "interval_score", "coverage"].iter().zip(&per_day) {
                for (&j, v) in days.iter().zip(values) {
                    rows.push(MetricRow {
                        method: label.clone(),
                        variable: variable.into(),
                        metric: (*metric).into(),
                        day: first + j as i64,
                        value: *v,
                    });
                }
            }
            let mean = |v: &Vec<f64>| v.iter().sum::<f64>() / v.len() as f64;
            summary.push(SummaryRow {
                method: label.clone(),
                variable: variable.into(),
                rmse: mean(&per_day[0]),
                interval_score: mean(&per_day[1]),
                coverage: mean(&per_day[2]),
            });
        }
    }
    Ok(MetricTable {
        days: days.iter().map(|&j| first + j as i64).collect(),
        rows,
        summary,
        n_effective: replicates.len(),
        failures,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentResult {
    pub table: MetricTable,
    pub replicates: Vec<ReplicateResult>,
}

/// Runs every replicate in order; failed replicates are skipped and listed.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentResult> {
    let setup = config.setup()?;
    let mut replicates = Vec::new();
    let mut failures = Vec::new();
    for i in 0..config.n_replicates {
        match run_replicate(config, &setup, i) {
            Ok(r) => replicates.push(r),
            Err(e) => failures.push(format!("replicate {i}: {e}")),
        }
    }
    let table = aggregate(config, &setup, &replicates, failures)?;
    Ok(ExperimentResult { table, replicates })
}

/// A small generative setting for simulation-based calibration.
#[derive(Debug, Clone)]
pub struct SbcSetup {
    pub t: usize,
    pub profile: InfectivityProfile,
    pub delay: DelayKernel,
    pub sigma: f64,
    pub tau: f64,
    pub lambda0: f64,
    pub mcmc: McmcConfig,
    /// Draws with any detection count above this are discarded.
    pub max_detections: u64,
}

/// Ranks of the true `L` among the posterior draws, one per latent day.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SbcRanks {
    pub ranks: Vec<usize>,
    pub draws: usize,
}

impl SbcRanks {
    /// Ranks spread uniformly onto `[0, 1]` with a jitter inside each rank cell.
    pub fn jittered<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        self.ranks
            .iter()
            .map(|&r| (r as f64 + uniform(rng)) / (self.draws + 1) as f64)
            .collect()
    }
}

/// Draws `(L, I, A, D)` from the full generative model and ranks the true `L`
/// within the sampler's posterior given `D`. `None` when the simulated data
/// exceed `max_detections`.
pub fn sbc_replicate(setup: &SbcSetup, seed: u64, index: u64) -> Result<Option<SbcRanks>> {
    let layout = Layout::for_models(setup.t, &setup.profile, &setup.delay)?;
    let mut rng = stream_rng(seed, streams::MONTE_CARLO + index);
    let log_r = sample_prior_log_r(layout.n_latent(), setup.sigma, setup.tau, &mut rng);
    let init: Vec<u64> = (0..layout.k_w).map(|_| poisson(&mut rng, setup.lambda0)).collect();
    let r: Vec<f64> = log_r.iter().map(|l| l.exp()).collect();
    let path = match simulate_path(
        setup.t,
        &r,
        &init,
        &setup.profile,
        &setup.delay,
        DEFAULT_DIVERGENCE_CAP,
        &mut rng,
    ) {
        Ok(p) => p,
        Err(Error::Divergence { .. }) => return Ok(None),
        Err(e) => return Err(e),
    };
    if path.detections.iter().any(|&d| d > setup.max_detections) {
        return Ok(None);
    }
    let d: Vec<f64> = path.detections.iter().map(|&x| x as f64).collect();
    let hyper = Hyperparams::new(setup.sigma, setup.tau, vec![setup.lambda0; layout.k_w])?;
    let problem = Problem::new(&d, &setup.profile, &setup.delay, hyper)?;
    let samples = run_mcmc(&problem, &setup.mcmc, mix_seed(seed, index))?;
    let ranks = (0..layout.n_latent())
        .map(|j| samples.log_r.iter().filter(|row| row[j] < log_r[j]).count())
        .collect();
    Ok(Some(SbcRanks {
        ranks,
        draws: samples.n_draws(),
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn interval_score_examples() {
        let p = ScoreConvention::Paper;
        assert_eq!(interval_score(1.0, 2.0, 1.5, 0.95, p).unwrap(), 1.0);
        assert!((interval_score(1.0, 2.0, 0.5, 0.95, p).unwrap() - 1.2375).abs() < 1e-15);
        assert!((interval_score(1.0, 2.0, 3.0, 0.95, p).unwrap() - 1.475).abs() < 1e-15);
        let s = ScoreConvention::Standard;
        assert!((interval_score(1.0, 2.0, 3.0, 0.95, s).unwrap() - 41.0).abs() < 1e-9);
        assert!(matches!(
            interval_score(2.0, 1.0, 0.0, 0.95, p),
            Err(Error::Parameter { .. })
        ));
    }

    #[test]
    fn rmse_examples() {
        let t = [1.0, 2.0, 3.0];
        assert_eq!(rmse(&t, &t).unwrap(), 0.0);
        let off: Vec<f64> = t.iter().map(|x| x - 0.7).collect();
        assert!((rmse(&off, &t).unwrap() - 0.7).abs() < 1e-12);
        assert!(rmse(&[], &[]).is_err());
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a: Vec<f64> = (0..50).map(|_| rng.random_range(-3.0..3.0)).collect();
        let b: Vec<f64> = (0..50).map(|_| rng.random_range(-3.0..3.0)).collect();
        // Two passes: mean of squares, then root.
        let mut acc = 0.0;
        for i in 0..50 {
            acc += (a[i] - b[i]).powi(2);
        }
        let oracle = (acc / 50.0).sqrt();
        assert!((rmse(&a, &b).unwrap() - oracle).abs() < 1e-12);
    }

    #[test]
    fn kolmogorov_tail_values() {
        // Classical critical values of the limiting distribution.
        assert!((kolmogorov_survival(1.3581) - 0.05).abs() < 5e-4);
        assert!((kolmogorov_survival(1.6276) - 0.01).abs() < 1e-4);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let u: Vec<f64> = (0..2000).map(|_| uniform(&mut rng)).collect();
        assert!(ks_uniform(&u).unwrap().p_value > 0.01);
        let skewed: Vec<f64> = u.iter().map(|x| x * x).collect();
        assert!(ks_uniform(&skewed).unwrap().p_value < 1e-6);
    }

    #[test]
    fn baseline_recovers_steady_state() {
        let profile = InfectivityProfile::reference();
        let kernel = DelayKernel::reference();
        let layout = Layout::for_models(60, &profile, &kernel).unwrap();
        let wd = WindowDelay::new(layout, &kernel).unwrap();
        let c = 500.0;
        let d = expected_detections(&vec![c; layout.n_latent()], &wd).unwrap();
        let config = BaselineConfig {
            n_boot: 20,
            ..BaselineConfig::default()
        };
        let b = baseline_two_step(&d, &wd, &profile, &config, &PROBS, 3).unwrap();
        let mut interior = 0;
        for j in 25..layout.n_latent() - 20 {
            let r = b.r_point[j].unwrap();
            assert!((r - 1.0).abs() < 1e-3, "day {}: {r}", layout.latent_day(j));
            interior += 1;
        }
        assert!(interior > 10);
        for q in b.r.iter().flatten().chain(&b.infections) {
            assert!(q[0] <= q[1] && q[1] <= q[2]);
        }
        assert!(b.r[..4].iter().all(|r| r.is_none()));
    }

    #[test]
    fn unit_delay_baseline_is_a_count_ratio() {
        let profile = InfectivityProfile::new(vec![0.4, 0.6]).unwrap();
        let kernel = DelayKernel::unit();
        let layout = Layout::for_models(12, &profile, &kernel).unwrap();
        let wd = WindowDelay::new(layout, &kernel).unwrap();
        let d: Vec<f64> = (1..=12).map(|t| (10 + 3 * t) as f64).collect();
        let b = baseline_two_step(
            &d,
            &wd,
            &profile,
            &BaselineConfig {
                n_boot: 5,
                window_r: 1,
                ..Default::default()
            },
            &PROBS,
            1,
        )
        .unwrap();
        // Stage 1 returns I_{t-1} = D_t exactly.
        for (i, di) in b.infections_point.iter().zip(&d) {
            assert!((i - di).abs() < 1e-9 * di);
        }
        for j in 2..layout.n_latent() {
            let kappa = 0.4 * d[j - 1] + 0.6 * d[j - 2];
            assert!((b.r_point[j].unwrap() - d[j] / kappa).abs() < 1e-9);
        }
    }

    #[test]
    fn truth_path_shape() {
        let r = default_truth_r(90);
        assert!((r[0] - 1.2).abs() < 1e-12);
        assert!(r.iter().cloned().fold(f64::INFINITY, f64::min) < 1.0);
        assert!(r.iter().cloned().fold(0.0, f64::max) > 1.3);
        assert!(*r.last().unwrap() < 1.0);
        assert!(r.windows(2).all(|w| (w[1] - w[0]).abs() < 0.05));
    }

    fn tiny_experiment(methods: Vec<Method>) -> ExperimentConfig {
        ExperimentConfig {
            n_replicates: 2,
            t: 14,
            lambda0: 30.0,
            methods,
            mcmc: McmcConfig {
                iterations: 400,
                burn_in: 100,
                thin: 3,
                chains: 1,
                init_shift: 2,
                init_em_steps: 10,
            },
            baseline: BaselineConfig {
                n_boot: 10,
                ..Default::default()
            },
            profile: Some(vec![0.2, 0.5, 0.3]),
            delay: Some(vec![0.3, 0.4, 0.2]),
            truth_r: Some(vec![1.05; 16]),
            ..ExperimentConfig::default()
        }
    }

    #[test]
    fn tiny_experiment_is_complete_and_deterministic() {
        let config = tiny_experiment(vec![Method::Mcmc, Method::Baseline]);
        let a = run_experiment(&config).unwrap();
        assert_eq!(a.table.n_effective, 2);
        assert!(!a.table.days.is_empty());
        assert!(a.table.rows.iter().all(|r| r.value.is_finite()));
        assert_eq!(a.table.summary.len(), 4);
        // Summaries are means of the per-day rows.
        for s in &a.table.summary {
            let v: Vec<f64> = a
                .table
                .rows
                .iter()
                .filter(|r| r.method == s.method && r.variable == s.variable && r.metric == "rmse")
                .map(|r| r.value)
                .collect();
            assert!((v.iter().sum::<f64>() / v.len() as f64 - s.rmse).abs() < 1e-12);
        }
        let b = run_experiment(&config).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn sequential_method_reports_lagged_days() {
        let config = tiny_experiment(vec![Method::Sequential {
            window: 10,
            offsets: vec![2],
        }]);
        let setup = config.setup().unwrap();
        let rep = run_replicate(&config, &setup, 0).unwrap();
        let est = &rep.estimates[0];
        assert_eq!(est.label, "sequential_s2");
        let first = setup.layout.first_latent_day();
        for (j, r) in est.r.iter().enumerate() {
            let day = first + j as i64;
            // Windows end on days 10..=14 and report days up to end - 1.
            let expect = (10..=14).contains(&(day + 2)) && day + 2 - 10 + 1 - 3 <= day;
            assert_eq!(r.is_some(), expect, "day {day}");
        }
    }

    #[test]
    fn bad_experiment_configs() {
        let mut c = tiny_experiment(vec![Method::Mcmc]);
        c.truth_r = Some(vec![1.0; 3]);
        assert!(matches!(c.setup(), Err(Error::Dimension { .. })));
        let mut c = tiny_experiment(vec![]);
        assert!(c.setup().is_err());
        c.methods = vec![Method::Mcmc];
        c.n_replicates = 0;
        assert!(c.setup().is_err());
        let json = r#"{"methods": ["mcmc", {"sequential": {"window": 10, "offsets": [2, 5]}}], "t": 14}"#;
        let parsed: ExperimentConfig = serde_json::from_str(json).unwrap();
        assert_eq!(parsed.methods[1].labels(), vec!["sequential_s2", "sequential_s5"]);
    }

    proptest! {
        #[test]
        fn interval_score_properties(l in -5.0f64..5.0, w in 0.0f64..3.0, x in -10.0f64..10.0, d in 0.01f64..2.0) {
            let u = l + w;
            for conv in [ScoreConvention::Paper, ScoreConvention::Standard] {
                let s = interval_score(l, u, x, 0.95, conv).unwrap();
                prop_assert!(s >= 0.0);
                if x >= l && x <= u {
                    prop_assert!((s - w).abs() < 1e-12);
                } else {
                    let further = if x < l { x - d } else { x + d };
                    prop_assert!(interval_score(l, u, further, 0.95, conv).unwrap() > s);
                }
            }
        }
    }
}
