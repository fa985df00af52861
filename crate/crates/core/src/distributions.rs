//! Infectivity profiles and infection-to-detection delay distributions.
//!
//! Both are dense probability vectors over lags `1..=K`. A delay kernel may be
//! defective: whatever mass is missing from the lags is the probability that
//! an infection is never detected. Weekday-dependent delays wrap a base kernel
//! and evaluate the weekday transform on demand.

use alloc::format;
use alloc::vec::Vec;
#[allow(unused_imports)] // shadowed by inherent methods when std is linked
use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::error::{ensure_positive, Error, Result};
use crate::special::{adaptive_simpson, GammaDist};

const NORMALIZATION_TOL: f64 = 1e-12;
const WEEKDAY_TOL: f64 = 1e-10;

/// Mean and standard deviation of the generation-time Gamma.
pub const PROFILE_MEAN: f64 = 4.8;
pub const PROFILE_SD: f64 = 2.3;
pub const PROFILE_HORIZON: usize = 12;
/// Incubation-time and onset-to-confirmation Gammas.
pub const INCUBATION_MEAN: f64 = 5.3;
pub const INCUBATION_SD: f64 = 3.2;
pub const REPORTING_MEAN: f64 = 5.5;
pub const REPORTING_SD: f64 = 3.8;
pub const DELAY_HORIZON: usize = 28;

/// Absolute tolerance of each per-cell integral in [`convolve_gamma_delay`].
pub const CONVOLUTION_CELL_TOL: f64 = 1e-10;

/// Normalized infectivity weights `w_1..w_K`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct InfectivityProfile {
    weights: Vec<f64>,
}

impl InfectivityProfile {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        check_probabilities("weights", &weights)?;
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > NORMALIZATION_TOL {
            return Err(Error::param(
                "weights",
                format!("must sum to 1 within {NORMALIZATION_TOL:e}, sum is {total}"),
            ));
        }
        Ok(InfectivityProfile { weights })
    }

    /// Rescales nonnegative weights to sum to one.
    pub fn from_unnormalized(weights: Vec<f64>) -> Result<Self> {
        check_probabilities("weights", &weights)?;
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            return Err(Error::param("weights", "all weights are zero"));
        }
        Self::new(weights.into_iter().map(|w| w / total).collect())
    }

    /// Discretized Gamma(mean 4.8, sd 2.3) truncated to 12 days.
    pub fn reference() -> Self {
        let weights =
            discretize_gamma(PROFILE_MEAN, PROFILE_SD, PROFILE_HORIZON).expect("reference parameters are valid");
        InfectivityProfile { weights }
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// `K_w`, the last lag with (possibly) nonzero weight.
    pub fn horizon(&self) -> usize {
        self.weights.len()
    }

    /// `Σ_k w_k I_{t-k}` for a chronological history ending at day `t - 1`.
    ///
    /// Lags reaching before the start of `history` contribute nothing.
    pub fn weighted_sum(&self, history: &[f64]) -> f64 {
        self.weights.iter().zip(history.iter().rev()).map(|(w, x)| w * x).sum()
    }
}

impl TryFrom<Vec<f64>> for InfectivityProfile {
    type Error = Error;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<InfectivityProfile> for Vec<f64> {
    fn from(p: InfectivityProfile) -> Self {
        p.weights
    }
}

/// Time-invariant, possibly defective, delay distribution `m_1..m_K` plus `m_+`.
///
/// Serialized as the JSON array of `m_k`; the nondetection mass is whatever
/// the array leaves to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct DelayKernel {
    probs: Vec<f64>,
    nondetect: f64,
}

impl DelayKernel {
    /// Kernel whose nondetection mass is `1 - Σ probs`.
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        check_probabilities("delay", &probs)?;
        let total: f64 = probs.iter().sum();
        if total > 1.0 + NORMALIZATION_TOL {
            return Err(Error::param(
                "delay",
                format!("detection probabilities sum to {total} > 1"),
            ));
        }
        Ok(DelayKernel {
            probs,
            nondetect: (1.0 - total).max(0.0),
        })
    }

    pub fn with_nondetect(probs: Vec<f64>, nondetect: f64) -> Result<Self> {
        check_probabilities("delay", &probs)?;
        if !(0.0..=1.0).contains(&nondetect) {
            return Err(Error::param("nondetect", format!("{nondetect} outside [0, 1]")));
        }
        let total: f64 = probs.iter().sum::<f64>() + nondetect;
        if (total - 1.0).abs() > NORMALIZATION_TOL {
            return Err(Error::param(
                "delay",
                format!("detection plus nondetection mass is {total}, not 1"),
            ));
        }
        Ok(DelayKernel { probs, nondetect })
    }

    /// Point mass at lag one: every infection is detected the next day.
    pub fn unit() -> Self {
        DelayKernel {
            probs: alloc::vec![1.0],
            nondetect: 0.0,
        }
    }

    /// Convolution of incubation and reporting Gammas, discretized to 28 days.
    pub fn reference() -> Self {
        convolve_gamma_delay(
            INCUBATION_MEAN,
            INCUBATION_SD,
            REPORTING_MEAN,
            REPORTING_SD,
            DELAY_HORIZON,
        )
        .expect("reference parameters are valid")
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn nondetect(&self) -> f64 {
        self.nondetect
    }

    pub fn horizon(&self) -> usize {
        self.probs.len()
    }

    pub fn detected_mass(&self) -> f64 {
        self.probs.iter().sum()
    }
}

impl TryFrom<Vec<f64>> for DelayKernel {
    type Error = Error;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<DelayKernel> for Vec<f64> {
    fn from(k: DelayKernel) -> Self {
        k.probs
    }
}

fn check_probabilities(name: &'static str, values: &[f64]) -> Result<()> {
    if values.is_empty() {
        return Err(Error::param(name, "must contain at least one lag"));
    }
    if let Some(bad) = values.iter().find(|v| !v.is_finite() || **v < 0.0) {
        return Err(Error::param(
            name,
            format!("entries must be finite and >= 0, found {bad}"),
        ));
    }
    Ok(())
}

/// Detection probabilities `m_{s,s+lag}` that may depend on the infection day.
pub trait DelayModel {
    /// Largest lag with nonzero probability for any day.
    fn max_lag(&self) -> usize;
    /// `m_{s,s+lag}` for `lag >= 1`; zero beyond [`DelayModel::max_lag`].
    fn prob(&self, day: i64, lag: usize) -> f64;
    /// `m_{s,+}`.
    fn nondetect(&self, day: i64) -> f64;
}

impl DelayModel for DelayKernel {
    fn max_lag(&self) -> usize {
        self.probs.len()
    }

    fn prob(&self, _day: i64, lag: usize) -> f64 {
        if lag == 0 {
            0.0
        } else {
            self.probs.get(lag - 1).copied().unwrap_or(0.0)
        }
    }

    fn nondetect(&self, _day: i64) -> f64 {
        self.nondetect
    }
}

/// Weekday modification applied to a base delay kernel.
///
/// Weekday indices run 0..7; the calendar anchor is carried separately by
/// [`TimeVaryingDelay`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeekdayWeights {
    /// Positive weights `w_0..w_6` rescaling detections by the weekday of detection.
    Multiplicative([f64; 7]),
    /// Row `i` gives the probability that a detection due on weekday `i`
    /// happens `k = 0..6` days later.
    Shift([[f64; 7]; 7]),
}

/// Delay distribution whose probabilities depend on the weekday of the infection day.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeVaryingDelay {
    base: DelayKernel,
    weights: WeekdayWeights,
    origin_weekday: u8,
    residue_mass: [f64; 7],
}

impl TimeVaryingDelay {
    pub fn base(&self) -> &DelayKernel {
        &self.base
    }

    pub fn weights(&self) -> &WeekdayWeights {
        &self.weights
    }

    /// Weekday index (0..7) of `day`, given the weekday of day 0.
    pub fn weekday(&self, day: i64) -> usize {
        (day + self.origin_weekday as i64).rem_euclid(7) as usize
    }
}

impl DelayModel for TimeVaryingDelay {
    fn max_lag(&self) -> usize {
        match self.weights {
            WeekdayWeights::Multiplicative(_) => self.base.horizon(),
            WeekdayWeights::Shift(_) => self.base.horizon() + 6,
        }
    }

    fn prob(&self, day: i64, lag: usize) -> f64 {
        if lag == 0 || lag > self.max_lag() {
            return 0.0;
        }
        match &self.weights {
            WeekdayWeights::Multiplicative(w) => {
                let class = self.residue_mass[lag % 7];
                if class <= 0.0 {
                    return 0.0;
                }
                w[self.weekday(day + lag as i64)] * self.base.prob(day, lag) / class
            }
            WeekdayWeights::Shift(v) => {
                let lo = lag.saturating_sub(6).max(1);
                let hi = lag.min(self.base.horizon());
                (lo..=hi)
                    .map(|j| self.base.prob(day, j) * v[self.weekday(day + j as i64)][lag - j])
                    .sum()
            }
        }
    }

    fn nondetect(&self, day: i64) -> f64 {
        DelayModel::nondetect(&self.base, day)
    }
}

/// Discretizes a Gamma(mean, sd) to lags `1..=k_max`.
///
/// Lag 1 collects the mass below 1.5, lag `k` the mass of `(k - 0.5, k + 0.5]`,
/// and the result is renormalized over the truncated support.
pub fn discretize_gamma(mean: f64, sd: f64, k_max: usize) -> Result<Vec<f64>> {
    ensure_positive("mean", mean)?;
    ensure_positive("sd", sd)?;
    let dist = GammaDist::from_mean_sd(mean, sd);
    discretize_cdf(|x| Ok(dist.cdf(x)), k_max)
}

fn discretize_cdf<F: FnMut(f64) -> Result<f64>>(mut cdf: F, k_max: usize) -> Result<Vec<f64>> {
    if k_max == 0 {
        return Err(Error::param("k_max", "must be at least 1"));
    }
    let mut probs = Vec::with_capacity(k_max);
    let mut prev = 0.0;
    for k in 1..=k_max {
        let next = cdf(k as f64 + 0.5)?;
        probs.push((next - prev).max(0.0));
        prev = next;
    }
    let total: f64 = probs.iter().sum();
    if !(total > 0.0) {
        return Err(Error::Numerical(format!(
            "no probability mass below {} days",
            k_max as f64 + 0.5
        )));
    }
    probs.iter_mut().for_each(|p| *p /= total);
    Ok(probs)
}

/// Delay kernel of the sum of two independent Gammas, discretized like
/// [`discretize_gamma`]. The result has no nondetection mass.
pub fn convolve_gamma_delay(mean1: f64, sd1: f64, mean2: f64, sd2: f64, k_max: usize) -> Result<DelayKernel> {
    convolve_gamma_delay_with_tol(mean1, sd1, mean2, sd2, k_max, CONVOLUTION_CELL_TOL)
}

pub fn convolve_gamma_delay_with_tol(
    mean1: f64,
    sd1: f64,
    mean2: f64,
    sd2: f64,
    k_max: usize,
    cell_tol: f64,
) -> Result<DelayKernel> {
    ensure_positive("mean1", mean1)?;
    ensure_positive("sd1", sd1)?;
    ensure_positive("mean2", mean2)?;
    ensure_positive("sd2", sd2)?;
    ensure_positive("cell_tol", cell_tol)?;
    let a = GammaDist::from_mean_sd(mean1, sd1);
    let b = GammaDist::from_mean_sd(mean2, sd2);
    // Integrate against the smoother density; the convolution is symmetric.
    let (density, cdf) = if a.shape >= b.shape { (a, b) } else { (b, a) };
    let probs = discretize_cdf(|x| convolution_cdf(&density, &cdf, x, cell_tol), k_max)?;
    DelayKernel::with_nondetect(probs, 0.0)
}

/// `G(x) = ∫_0^x F(x - y) f(y) dy`, integrated cell by cell on a half-integer grid.
fn convolution_cdf(density: &GammaDist, cdf: &GammaDist, x: f64, cell_tol: f64) -> Result<f64> {
    let mut edges = Vec::new();
    edges.push(0.0);
    let mut e = 0.5;
    while e < x {
        edges.push(e);
        e += 1.0;
    }
    edges.push(x);
    let mut total = 0.0;
    for pair in edges.windows(2) {
        let (lo, hi) = (pair[0], pair[1]);
        if hi <= lo {
            continue;
        }
        let cell = if lo == 0.0 && density.shape < 1.0 {
            // y = v^(1/shape) removes the integrable singularity at zero.
            let p = 1.0 / density.shape;
            let integrand = |v: f64| {
                if v <= 0.0 {
                    return cdf.cdf(x) * density.rate.powf(density.shape) / libm::tgamma(density.shape) * p;
                }
                let y = v.powf(p);
                cdf.cdf(x - y) * density.pdf(y) * p * v.powf(p - 1.0)
            };
            adaptive_simpson(&integrand, 0.0, hi.powf(density.shape), cell_tol)?
        } else {
            let integrand = |y: f64| cdf.cdf(x - y) * density.pdf(y);
            adaptive_simpson(&integrand, lo, hi, cell_tol)?
        };
        total += cell;
    }
    Ok(total)
}

/// Weekday-shift delay: a detection due on weekday `i` is postponed by `k`
/// days with probability `v[i][k]`.
pub fn weekday_shift_delay(base: &DelayKernel, v: [[f64; 7]; 7], origin_weekday: u8) -> Result<TimeVaryingDelay> {
    for (i, row) in v.iter().enumerate() {
        if row.iter().any(|x| !x.is_finite() || *x < 0.0) {
            return Err(Error::param("shift", format!("row {i} has a negative entry")));
        }
        let total: f64 = row.iter().sum();
        if (total - 1.0).abs() > WEEKDAY_TOL {
            return Err(Error::param("shift", format!("row {i} sums to {total}, not 1")));
        }
    }
    Ok(TimeVaryingDelay {
        base: base.clone(),
        weights: WeekdayWeights::Shift(v),
        origin_weekday: origin_weekday % 7,
        residue_mass: residue_mass(base),
    })
}

/// Multiplicative weekday delay: `m_{s,s+k} = w_{weekday(s+k)} m_k / Σ_{k' ≡ k (7)} m_{k'}`.
///
/// Requires `Σ w = Σ m` so that every infection day keeps the base detection mass.
pub fn weekday_multiplicative_delay(base: &DelayKernel, w: [f64; 7], origin_weekday: u8) -> Result<TimeVaryingDelay> {
    if w.iter().any(|x| !x.is_finite() || *x <= 0.0) {
        return Err(Error::param("weekday_weights", "weights must be positive"));
    }
    let target = base.detected_mass();
    let total: f64 = w.iter().sum();
    if (total - target).abs() > WEEKDAY_TOL {
        return Err(Error::param(
            "weekday_weights",
            format!("weights sum to {total} but the base kernel detects {target}"),
        ));
    }
    let residue = residue_mass(base);
    if let Some(r) = residue.iter().position(|m| *m <= 0.0) {
        return Err(Error::param(
            "delay",
            format!("no base mass at lags congruent to {r} mod 7; weekday weight cannot be placed"),
        ));
    }
    Ok(TimeVaryingDelay {
        base: base.clone(),
        weights: WeekdayWeights::Multiplicative(w),
        origin_weekday: origin_weekday % 7,
        residue_mass: residue,
    })
}

fn residue_mass(base: &DelayKernel) -> [f64; 7] {
    let mut out = [0.0; 7];
    for (i, p) in base.probs().iter().enumerate() {
        out[(i + 1) % 7] += p;
    }
    out
}
