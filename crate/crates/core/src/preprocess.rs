//! Seasonal-trend decomposition of log counts and the smoothed series built from it.
//!
//! The decomposition follows the classical loess-based scheme: an inner loop
//! alternating cycle-subseries smoothing, a low-pass filter and a trend fit,
//! and an optional outer loop of bisquare robustness weights.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

#[allow(unused_imports)] // shadowed by inherent methods when std is linked
use num_traits::Float;

use crate::error::{Error, Result};

pub const PERIOD: usize = 7;
pub const DEFAULT_TREND_WINDOW: usize = 15;
const LOWPASS_WINDOW: usize = 7;
const ROBUST_PASSES: usize = 2;
const INNER_TOL: f64 = 1e-11;
const MAX_INNER: usize = 500;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeasonalMode {
    /// Identical weekday pattern in every week.
    Periodic,
    /// Loess over each weekday's subseries with this (odd) span.
    Window(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SmoothingConfig {
    pub trend_window: usize,
    pub seasonal: SeasonalMode,
    pub robust: bool,
    /// Offset added before taking logs; required when counts contain zeros.
    #[serde(default)]
    pub zero_offset: Option<f64>,
}

impl SmoothingConfig {
    /// Periodic weekday pattern, trend span 15, robust.
    pub fn periodic() -> Self {
        SmoothingConfig {
            trend_window: DEFAULT_TREND_WINDOW,
            seasonal: SeasonalMode::Periodic,
            robust: true,
            zero_offset: None,
        }
    }

    /// Weekday pattern smoothed over 7 weeks, trend span 15, robust.
    pub fn windowed() -> Self {
        SmoothingConfig {
            seasonal: SeasonalMode::Window(7),
            ..Self::periodic()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecompositionResult {
    pub trend: Vec<f64>,
    pub seasonal: Vec<f64>,
    pub remainder: Vec<f64>,
    pub robustness_weights: Vec<f64>,
    /// Inner-loop sweeps used by the final fit.
    pub inner_iterations: usize,
}

/// Splits `y` into trend, period-7 seasonal and remainder, `y = T + S + R`.
pub fn decompose(y: &[f64], trend_window: usize, seasonal: SeasonalMode, robust: bool) -> Result<DecompositionResult> {
    let n = y.len();
    if n < 2 * PERIOD {
        return Err(Error::Data(format!(
            "decomposition needs at least {} days, got {n}",
            2 * PERIOD
        )));
    }
    if let Some(i) = y.iter().position(|v| !v.is_finite()) {
        return Err(Error::Data(format!("non-finite log count at position {i}")));
    }
    if trend_window < 7 || trend_window % 2 == 0 {
        return Err(Error::param(
            "trend_window",
            format!("must be odd and >= 7, got {trend_window}"),
        ));
    }
    if let SeasonalMode::Window(w) = seasonal {
        if w < 3 || w % 2 == 0 {
            return Err(Error::param(
                "seasonal",
                format!("window must be odd and >= 3, got {w}"),
            ));
        }
    }

    let mut weights = vec![1.0; n];
    let mut trend = vec![0.0; n];
    let mut season = vec![0.0; n];
    let passes = if robust { 1 + ROBUST_PASSES } else { 1 };
    let mut inner_iterations = 0;
    for pass in 0..passes {
        if pass > 0 {
            weights = bisquare_weights(y, &trend, &season);
        }
        inner_iterations = inner_loop(y, &weights, trend_window, seasonal, &mut trend, &mut season);
    }

    if seasonal == SeasonalMode::Periodic {
        let mut means = [0.0; PERIOD];
        let mut counts = [0usize; PERIOD];
        for (i, s) in season.iter().enumerate() {
            means[i % PERIOD] += s;
            counts[i % PERIOD] += 1;
        }
        for (m, c) in means.iter_mut().zip(counts) {
            *m /= c as f64;
        }
        let centre = means.iter().sum::<f64>() / PERIOD as f64;
        for (i, s) in season.iter_mut().enumerate() {
            *s = means[i % PERIOD] - centre;
        }
        for t in trend.iter_mut() {
            *t += centre;
        }
    }
    let remainder = y
        .iter()
        .zip(trend.iter().zip(&season))
        .map(|(v, (t, s))| v - t - s)
        .collect();
    Ok(DecompositionResult {
        trend,
        seasonal: season,
        remainder,
        robustness_weights: weights,
        inner_iterations,
    })
}

fn inner_loop(
    y: &[f64],
    weights: &[f64],
    trend_window: usize,
    mode: SeasonalMode,
    trend: &mut [f64],
    season: &mut [f64],
) -> usize {
    let n = y.len();
    let scale = y.iter().fold(1.0_f64, |m, v| m.max(v.abs()));
    let mut detrended = vec![0.0; n];
    let mut cycle = vec![0.0; n + 2 * PERIOD];
    let mut deseason = vec![0.0; n];
    for sweep in 1..=MAX_INNER {
        for i in 0..n {
            detrended[i] = y[i] - trend[i];
        }
        smooth_subseries(&detrended, weights, mode, &mut cycle);
        let low = low_pass(&cycle);
        let mut change = 0.0_f64;
        for i in 0..n {
            let s = cycle[i + PERIOD] - low[i];
            change = change.max((s - season[i]).abs());
            season[i] = s;
            deseason[i] = y[i] - s;
        }
        let new_trend = loess(&deseason, weights, trend_window);
        for i in 0..n {
            change = change.max((new_trend[i] - trend[i]).abs());
            trend[i] = new_trend[i];
        }
        if change <= INNER_TOL * scale {
            return sweep;
        }
    }
    MAX_INNER
}

/// Smooths each weekday's subseries and extends it by one cycle on each side.
///
/// `out` has `n + 14` entries: position `i + 7` holds the value for day `i`.
fn smooth_subseries(x: &[f64], weights: &[f64], mode: SeasonalMode, out: &mut [f64]) {
    let n = x.len();
    for phase in 0..PERIOD {
        let idx: Vec<usize> = (phase..n).step_by(PERIOD).collect();
        let sub: Vec<f64> = idx.iter().map(|&i| x[i]).collect();
        let sw: Vec<f64> = idx.iter().map(|&i| weights[i]).collect();
        let m = sub.len();
        let fitted: Vec<f64> = match mode {
            SeasonalMode::Periodic => {
                let total: f64 = sw.iter().sum();
                let mean = if total > 0.0 {
                    sub.iter().zip(&sw).map(|(v, w)| v * w).sum::<f64>() / total
                } else {
                    sub.iter().sum::<f64>() / m as f64
                };
                vec![mean; m + 2]
            }
            SeasonalMode::Window(span) => (-1..=m as i64)
                .map(|pos| loess_at(&sub, &sw, span, pos as f64).unwrap_or_else(|| nearest(&sub, pos)))
                .collect(),
        };
        out[phase] = fitted[0];
        for (k, &i) in idx.iter().enumerate() {
            out[i + PERIOD] = fitted[k + 1];
        }
        out[n + PERIOD + phase_after(n, phase)] = fitted[m + 1];
    }
}

/// Offset within the trailing cycle of the first day after the series with this phase.
fn phase_after(n: usize, phase: usize) -> usize {
    (phase + PERIOD - n % PERIOD) % PERIOD
}

fn nearest(v: &[f64], pos: i64) -> f64 {
    v[pos.clamp(0, v.len() as i64 - 1) as usize]
}

fn moving_average(x: &[f64], len: usize) -> Vec<f64> {
    let inv = 1.0 / len as f64;
    (0..=x.len() - len)
        .map(|i| x[i..i + len].iter().sum::<f64>() * inv)
        .collect()
}

fn low_pass(cycle: &[f64]) -> Vec<f64> {
    let a = moving_average(cycle, PERIOD);
    let b = moving_average(&a, PERIOD);
    let c = moving_average(&b, 3);
    let ones = vec![1.0; c.len()];
    loess(&c, &ones, LOWPASS_WINDOW)
}

/// Degree-1 loess at every integer position.
fn loess(y: &[f64], weights: &[f64], span: usize) -> Vec<f64> {
    (0..y.len())
        .map(|i| loess_at(y, weights, span, i as f64).unwrap_or(y[i]))
        .collect()
}

/// Locally linear tricube-weighted fit at `x` using the `span` nearest points.
///
/// Returns `None` when every neighbour has zero weight.
fn loess_at(y: &[f64], weights: &[f64], span: usize, x: f64) -> Option<f64> {
    let n = y.len();
    let q = span.min(n);
    // Window of q consecutive points nearest to x.
    let mut left = 0usize;
    if x > 0.0 {
        let centre = x.round().clamp(0.0, (n - 1) as f64) as usize;
        left = centre.saturating_sub(q / 2).min(n - q);
        while left + q < n && (x - left as f64) > (left as f64 + q as f64 - x) {
            left += 1;
        }
        while left > 0 && ((left + q - 1) as f64 - x) > (x - (left - 1) as f64) {
            left -= 1;
        }
    }
    let right = left + q - 1;
    let mut h = (x - left as f64).max(right as f64 - x);
    if span > n {
        h += ((span - n) / 2) as f64;
    }
    let (mut sw, mut sx, mut sy) = (0.0, 0.0, 0.0);
    let mut w = [0.0; 64];
    let mut wv = Vec::new();
    let ws: &mut [f64] = if q <= 64 {
        &mut w[..q]
    } else {
        wv.resize(q, 0.0);
        &mut wv
    };
    for (k, j) in (left..=right).enumerate() {
        let r = (j as f64 - x).abs();
        let tri = if h <= 0.0 {
            1.0
        } else if r <= 0.001 * h {
            1.0
        } else if r > 0.999 * h {
            0.0
        } else {
            let u = r / h;
            let v = 1.0 - u * u * u;
            v * v * v
        };
        let wt = tri * weights[j];
        ws[k] = wt;
        sw += wt;
        sx += wt * j as f64;
        sy += wt * y[j];
    }
    if sw <= 0.0 {
        return None;
    }
    let xm = sx / sw;
    let ym = sy / sw;
    let (mut sxx, mut sxy) = (0.0, 0.0);
    for (k, j) in (left..=right).enumerate() {
        let dx = j as f64 - xm;
        sxx += ws[k] * dx * dx;
        sxy += ws[k] * dx * (y[j] - ym);
    }
    let range = (n - 1) as f64;
    if sxx.sqrt() > 0.001 * range * sw.sqrt() && sxx > 0.0 {
        Some(ym + sxy / sxx * (x - xm))
    } else {
        Some(ym)
    }
}

fn bisquare_weights(y: &[f64], trend: &[f64], season: &[f64]) -> Vec<f64> {
    let abs_r: Vec<f64> = y
        .iter()
        .zip(trend.iter().zip(season))
        .map(|(v, (t, s))| (v - t - s).abs())
        .collect();
    let h = 6.0 * median(&abs_r);
    let (c1, c9) = (0.001 * h, 0.999 * h);
    abs_r
        .iter()
        .map(|&r| {
            if r <= c1 {
                1.0
            } else if r > c9 {
                0.0
            } else {
                let u = r / h;
                (1.0 - u * u) * (1.0 - u * u)
            }
        })
        .collect()
}

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(|a, b| a.total_cmp(b));
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Smoothed {
    /// `D̄_t`, summing to `Σ D_t`.
    pub smoothed: Vec<f64>,
    pub decomposition: DecompositionResult,
}

/// Exponentiated trend of the log counts, rescaled to the raw total.
pub fn smooth_detections(counts: &[f64], config: &SmoothingConfig) -> Result<Smoothed> {
    let offset = config.zero_offset.unwrap_or(0.0);
    if let Some(c) = config.zero_offset {
        if !(c > 0.0) || !c.is_finite() {
            return Err(Error::param("zero_offset", format!("must be > 0, got {c}")));
        }
    }
    if let Some(i) = counts.iter().position(|d| !(*d >= 0.0) || !d.is_finite()) {
        return Err(Error::Data(format!("count at position {i} is negative or not finite")));
    }
    if config.zero_offset.is_none() {
        if let Some(i) = counts.iter().position(|d| *d == 0.0) {
            return Err(Error::Data(format!(
                "zero count at position {i}; log smoothing needs positive counts (enable a zero offset, e.g. 0.5)"
            )));
        }
    }
    let logs: Vec<f64> = counts.iter().map(|d| (d + offset).ln()).collect();
    let decomposition = decompose(&logs, config.trend_window, config.seasonal, config.robust)?;
    let raw: Vec<f64> = decomposition
        .trend
        .iter()
        .map(|t| (t.exp() - offset).max(0.0))
        .collect();
    let total: f64 = counts.iter().sum();
    let level: f64 = raw.iter().sum();
    let smoothed = if level > 0.0 {
        let k = total / level;
        raw.iter().map(|x| x * k).collect()
    } else {
        vec![total / counts.len() as f64; counts.len()]
    };
    Ok(Smoothed {
        smoothed,
        decomposition,
    })
}

/// Multiplicative weekday effects, index 0 = Monday, with geometric mean 1.
///
/// `first_weekday` is the weekday index (0 = Monday) of `counts[0]`.
pub fn weekday_effect_estimates(counts: &[f64], config: &SmoothingConfig, first_weekday: usize) -> Result<[f64; 7]> {
    let sm = smooth_detections(counts, config)?;
    let mut sums = [0.0; 7];
    let mut n = [0usize; 7];
    for (i, s) in sm.decomposition.seasonal.iter().enumerate() {
        let wd = (first_weekday + i) % 7;
        sums[wd] += s;
        n[wd] += 1;
    }
    let mut logs = [0.0; 7];
    for d in 0..7 {
        logs[d] = sums[d] / n[d] as f64;
    }
    let centre = logs.iter().sum::<f64>() / 7.0;
    Ok(logs.map(|l| (l - centre).exp()))
}
