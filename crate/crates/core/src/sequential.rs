//! Rolling-window estimation and stitching of per-day quantile histories.
//!
//! Days are indexed from 1 for the first entry of the stream. A window ending
//! on day `t` covers detections `t-ℓ+1..=t` and estimates days
//! `t-ℓ+1-K_m..=t-1`. After stitching, days `t-⌊ℓ/2⌋..=t-1` carry the new
//! window's quantiles, blended linearly with the previous values over the
//! first [`TRANSITION_SPAN`] of them; older days are frozen.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::mcmc::{make_lambda0, posterior_quantiles, McmcConfig, PosteriorSamples, LAMBDA0_FLOOR};
use crate::window::WindowDelay;

pub const DEFAULT_WINDOW: usize = 42;
pub const TRANSITION_SPAN: usize = 3;

/// One day's quantiles with the end day of the window that produced them.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QuantileRecord {
    pub day: i64,
    pub values: Vec<f64>,
    pub source_window_end: i64,
}

/// Quantiles of one window in stream days.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WindowQuantiles {
    pub window_end: i64,
    /// Stream day of the first estimated day.
    pub first_day: i64,
    pub probs: Vec<f64>,
    pub r: Vec<Vec<f64>>,
    pub infections: Vec<Vec<f64>>,
}

impl WindowQuantiles {
    /// Converts a posterior summary of the window ending on `window_end`.
    pub fn from_samples(samples: &PosteriorSamples, window_end: i64, probs: &[f64]) -> Result<Self> {
        let q = posterior_quantiles(samples, probs)?;
        let offset = window_end - samples.layout.t as i64;
        Ok(WindowQuantiles {
            window_end,
            first_day: q.first_day + offset,
            probs: q.probs,
            r: q.r,
            infections: q.infections,
        })
    }

    pub fn last_day(&self) -> i64 {
        self.first_day + self.r.len() as i64 - 1
    }

    fn check(&self) -> Result<()> {
        if self.r.len() != self.infections.len() || self.r.is_empty() {
            return Err(Error::Consistency(
                "window quantile tables differ in length or are empty".into(),
            ));
        }
        if self.last_day() >= self.window_end {
            return Err(Error::Consistency(format!(
                "window ending on day {} reports day {}",
                self.window_end,
                self.last_day()
            )));
        }
        let k = self.probs.len();
        if self.r.iter().chain(&self.infections).any(|row| row.len() != k) {
            return Err(Error::Consistency(
                "quantile rows do not match the probabilities".into(),
            ));
        }
        Ok(())
    }
}

/// A contiguous run of daily records.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StitchedHistory {
    pub probs: Vec<f64>,
    pub window: usize,
    /// `⌊ℓ/2⌋`.
    pub half_window: usize,
    pub transition_span: usize,
    pub r: Vec<QuantileRecord>,
    pub infections: Vec<QuantileRecord>,
}

impl StitchedHistory {
    pub fn first_day(&self) -> Option<i64> {
        self.r.first().map(|r| r.day)
    }

    pub fn last_day(&self) -> Option<i64> {
        self.r.last().map(|r| r.day)
    }

    /// Checks that days are contiguous and each record lies in its source window.
    pub fn check(&self, k_m: usize) -> Result<()> {
        for series in [&self.r, &self.infections] {
            for w in series.windows(2) {
                if w[1].day != w[0].day + 1 {
                    return Err(Error::Consistency(format!(
                        "days {} and {} are not consecutive",
                        w[0].day, w[1].day
                    )));
                }
            }
            for rec in series {
                let lo = rec.source_window_end - self.window as i64 + 1 - k_m as i64;
                if rec.day < lo || rec.day >= rec.source_window_end {
                    return Err(Error::Consistency(format!(
                        "day {} lies outside the window ending on day {}",
                        rec.day, rec.source_window_end
                    )));
                }
            }
        }
        Ok(())
    }
}

fn records(q: &[Vec<f64>], first_day: i64, end: i64) -> Vec<QuantileRecord> {
    q.iter()
        .enumerate()
        .map(|(i, v)| QuantileRecord {
            day: first_day + i as i64,
            values: v.clone(),
            source_window_end: end,
        })
        .collect()
}

fn merge(
    prev: &[QuantileRecord],
    new: &[Vec<f64>],
    new_first: i64,
    end: i64,
    half: usize,
    span: usize,
) -> Result<Vec<QuantileRecord>> {
    let from = end - half as i64;
    let prev_first = prev.first().map_or(from, |r| r.day);
    let prev_last = prev.last().map_or(from - 1, |r| r.day);
    if prev_last + 1 < from {
        return Err(Error::Consistency(format!(
            "no estimates for days {}..{} between the history and the window ending on day {end}",
            prev_last + 1,
            from - 1
        )));
    }
    if new_first > from {
        return Err(Error::Consistency(format!(
            "window ending on day {end} starts on day {new_first}, after day {from}"
        )));
    }
    let mut out: Vec<QuantileRecord> = prev.iter().filter(|r| r.day < from).cloned().collect();
    for day in from..end {
        let fresh = &new[(day - new_first) as usize];
        let k = (day - from) as usize;
        let values = match prev
            .get((day - prev_first) as usize)
            .filter(|_| day >= prev_first && k < span)
        {
            Some(old) => {
                let a = (k + 1) as f64 / (span + 1) as f64;
                old.values
                    .iter()
                    .zip(fresh)
                    .map(|(o, n)| (1.0 - a) * o + a * n)
                    .collect()
            }
            None => fresh.clone(),
        };
        out.push(QuantileRecord {
            day,
            values,
            source_window_end: end,
        });
    }
    Ok(out)
}

/// Adds a window's quantiles to the history.
///
/// The first window supplies every day it estimates.
pub fn stitch(
    previous: Option<&StitchedHistory>,
    new: &WindowQuantiles,
    window: usize,
    span: usize,
) -> Result<StitchedHistory> {
    new.check()?;
    let half = window / 2;
    match previous {
        None => Ok(StitchedHistory {
            probs: new.probs.clone(),
            window,
            half_window: half,
            transition_span: span,
            r: records(&new.r, new.first_day, new.window_end),
            infections: records(&new.infections, new.first_day, new.window_end),
        }),
        Some(prev) => {
            if prev.probs != new.probs {
                return Err(Error::Consistency(
                    "quantile probabilities changed between windows".into(),
                ));
            }
            Ok(StitchedHistory {
                r: merge(&prev.r, &new.r, new.first_day, new.window_end, half, span)?,
                infections: merge(
                    &prev.infections,
                    &new.infections,
                    new.first_day,
                    new.window_end,
                    half,
                    span,
                )?,
                ..prev.clone()
            })
        }
    }
}

/// Prior means for the initial days of a window starting `offset` days after
/// the window of `previous`: posterior means of those days' infections,
/// floored at [`LAMBDA0_FLOOR`]. `None` when the days are not covered.
pub fn carry_prior(previous: &PosteriorSamples, offset: i64) -> Option<Vec<f64>> {
    if previous.n_draws() == 0 {
        return None;
    }
    let layout = &previous.layout;
    let first = layout.first_init_day() + offset;
    let last = first + layout.k_w as i64 - 1;
    if first < layout.first_init_day() || last > layout.last_latent_day() {
        return None;
    }
    let n = previous.n_draws() as f64;
    Some(
        (first..=last)
            .map(|day| {
                let i = layout.total_index(day);
                let mean = previous.infections.iter().map(|row| row[i] as f64).sum::<f64>() / n;
                mean.max(LAMBDA0_FLOOR)
            })
            .collect(),
    )
}

/// What a window fit is given.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowInput<'a> {
    /// Stream day of the window's last observation.
    pub end: i64,
    /// Raw detections in the window.
    pub raw: &'a [f64],
    /// Prior means for the initial days, when carried from the previous window.
    pub carried_lambda0: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WindowReport {
    pub window_end: i64,
    pub succeeded: bool,
    pub error: Option<String>,
    pub prior_carried: bool,
    pub draws: usize,
    pub max_r_hat: Option<f64>,
    pub infection_acceptance: Vec<f64>,
    pub log_r_acceptance: Vec<f64>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SequentialResult {
    pub history: Option<StitchedHistory>,
    pub reports: Vec<WindowReport>,
    /// Every window's quantiles, when requested.
    pub windows: Vec<WindowQuantiles>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RollingConfig {
    pub window: usize,
    pub probs: Vec<f64>,
    pub transition_span: usize,
    pub keep_windows: bool,
}

impl RollingConfig {
    pub fn new(window: usize, probs: Vec<f64>) -> Self {
        RollingConfig {
            window,
            probs,
            transition_span: TRANSITION_SPAN,
            keep_windows: false,
        }
    }
}

/// Fits every window of length `ℓ` in turn, carrying initial-day priors
/// forward and stitching the quantiles.
///
/// `fit` runs the full sampler on one window; a failed window is reported and
/// skipped, and the next window falls back to a fresh prior.
pub fn rolling_fit<F>(stream: &[f64], config: &RollingConfig, mut fit: F) -> Result<SequentialResult>
where
    F: FnMut(WindowInput<'_>) -> Result<PosteriorSamples>,
{
    let l = config.window;
    if l < 2 {
        return Err(Error::param("window", "must be at least 2 days"));
    }
    if stream.len() < l {
        return Err(Error::Data(format!(
            "stream has {} days, fewer than the window length {l}",
            stream.len()
        )));
    }
    crate::mcmc::check_probs(&config.probs)?;
    let mut history: Option<StitchedHistory> = None;
    let mut previous: Option<(i64, PosteriorSamples)> = None;
    let mut out = SequentialResult {
        history: None,
        reports: Vec::new(),
        windows: Vec::new(),
    };
    for end in l..=stream.len() {
        let end_day = end as i64;
        let carried = previous
            .as_ref()
            .and_then(|(prev_end, s)| carry_prior(s, end_day - prev_end));
        let input = WindowInput {
            end: end_day,
            raw: &stream[end - l..end],
            carried_lambda0: carried.clone(),
        };
        let mut report = WindowReport {
            window_end: end_day,
            succeeded: false,
            error: None,
            prior_carried: carried.is_some(),
            draws: 0,
            max_r_hat: None,
            infection_acceptance: Vec::new(),
            log_r_acceptance: Vec::new(),
            warnings: Vec::new(),
        };
        let step = fit(input).and_then(|samples| {
            let q = WindowQuantiles::from_samples(&samples, end_day, &config.probs)?;
            let h = stitch(history.as_ref(), &q, l, config.transition_span)?;
            Ok((samples, q, h))
        });
        match step {
            Ok((samples, q, h)) => {
                report.succeeded = true;
                report.draws = samples.n_draws();
                report.max_r_hat = samples
                    .r_hat()
                    .into_iter()
                    .filter(|v| v.is_finite())
                    .fold(None, |m: Option<f64>, v| Some(m.map_or(v, |m| m.max(v))));
                report.infection_acceptance = samples.stats.iter().map(|s| s.infection_block.rate()).collect();
                report.log_r_acceptance = samples.stats.iter().map(|s| s.log_r_block.rate()).collect();
                report.warnings = samples.warnings.clone();
                history = Some(h);
                if config.keep_windows {
                    out.windows.push(q);
                }
                previous = Some((end_day, samples));
            }
            Err(e) => {
                report.error = Some(format!("{e}"));
                previous = None;
            }
        }
        out.reports.push(report);
    }
    out.history = history;
    Ok(out)
}

/// Prior means for a window: carried values when present, otherwise the mean
/// of the seven raw counts before the window (`pre_window`) or the
/// EM-based fallback.
pub fn window_lambda0(
    carried: Option<Vec<f64>>,
    pre_window: Option<&[f64]>,
    smoothed: &[f64],
    delay: &WindowDelay,
    k_w: usize,
    config: &McmcConfig,
) -> Result<(Vec<f64>, Option<String>)> {
    match carried {
        Some(v) if v.len() == k_w => Ok((v, None)),
        _ => {
            let l = make_lambda0(pre_window, smoothed, delay, k_w, config)?;
            Ok((l.values, l.warning))
        }
    }
}

/// Prior means shaped for a window of `k_w` initial days; `vec![x; k_w]`.
pub fn constant_lambda0(x: f64, k_w: usize) -> Vec<f64> {
    vec![x.max(LAMBDA0_FLOOR); k_w]
}
