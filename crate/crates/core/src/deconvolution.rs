//! Richardson–Lucy (EM) deconvolution of detection counts into infections.
//!
//! Vectors of infections here cover the latent days `1-K_m..=T-1` of a
//! [`WindowDelay`]; detection vectors cover `1..=T`.

use alloc::vec;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

#[allow(unused_imports)] // shadowed by inherent methods when std is linked
use num_traits::Float;

use crate::error::{Error, Result};
use crate::window::WindowDelay;

/// Expected detections below this count as zero.
const ZERO_EXPECTATION: f64 = 1e-300;
/// Lower bound for starting values so that every iterate stays positive.
pub const START_FLOOR: f64 = 1e-6;
pub const DEFAULT_SHIFT: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stopping {
    FixedIters(usize),
    /// Stop once the chi-squared statistic drops below the threshold.
    ChiSquaredBelow(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Start {
    /// Detections shifted back, extended by the edge values.
    ShiftedConstant,
    /// Detections shifted back, extended by the least-squares line through the
    /// nearest week at each edge.
    ShiftedLinear,
    Explicit(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeconvolutionConfig {
    pub max_iters: usize,
    pub stopping: Stopping,
    pub start: Start,
    /// Days by which detections are moved back to build a start.
    #[serde(default = "default_shift")]
    pub shift: usize,
}

fn default_shift() -> usize {
    DEFAULT_SHIFT
}

impl DeconvolutionConfig {
    /// Chi-squared stopping at the number of observed days.
    pub fn for_length(t: usize) -> Self {
        DeconvolutionConfig {
            max_iters: 10_000,
            stopping: Stopping::ChiSquaredBelow(t as f64),
            start: Start::ShiftedConstant,
            shift: DEFAULT_SHIFT,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_iters == 0 {
            return Err(Error::param("max_iters", "must be at least 1"));
        }
        match self.stopping {
            Stopping::FixedIters(0) => Err(Error::param("stopping", "fixed iteration count must be >= 1")),
            Stopping::ChiSquaredBelow(x) if !(x > 0.0) => {
                Err(Error::param("stopping", "chi-squared threshold must be > 0"))
            }
            _ => Ok(()),
        }
    }
}

/// `E(D_t | I) = Σ_s I_s m_{s,t}` for `t = 1..=T`.
pub fn expected_detections(infections: &[f64], delay: &WindowDelay) -> Result<Vec<f64>> {
    let layout = delay.layout();
    check_len(infections, layout.n_latent())?;
    let mut e = vec![0.0; layout.t];
    for (idx, slot) in e.iter_mut().enumerate() {
        let t = idx as i64 + 1;
        *slot = delay.sources(t).map(|j| infections[j] * delay.m(j, t)).sum();
    }
    Ok(e)
}

fn check_len(v: &[f64], n: usize) -> Result<()> {
    if v.len() != n {
        return Err(Error::Dimension {
            what: "infection vector",
            expected: n,
            found: v.len(),
        });
    }
    Ok(())
}

/// Poisson pseudo-log-likelihood `Σ_t (-E_t + D_t log E_t)`.
pub fn pseudo_log_likelihood(detections: &[f64], expected: &[f64]) -> f64 {
    detections
        .iter()
        .zip(expected)
        .map(|(&d, &e)| if d == 0.0 { -e } else { -e + d * e.ln() })
        .sum()
}

/// `Σ_t (D_t - E_t)² / E_t`, skipping days with `E_t = D_t = 0`.
pub fn chi_squared(detections: &[f64], expected: &[f64]) -> f64 {
    detections
        .iter()
        .zip(expected)
        .map(|(&d, &e)| {
            if e < ZERO_EXPECTATION {
                if d == 0.0 {
                    0.0
                } else {
                    f64::INFINITY
                }
            } else {
                (d - e) * (d - e) / e
            }
        })
        .sum()
}

fn ratios(detections: &[f64], expected: &[f64]) -> Result<Vec<f64>> {
    detections
        .iter()
        .zip(expected)
        .enumerate()
        .map(|(idx, (&d, &e))| {
            if e < ZERO_EXPECTATION {
                if d == 0.0 {
                    Ok(0.0)
                } else {
                    Err(Error::SupportConflict {
                        day: idx as i64 + 1,
                        count: d,
                    })
                }
            } else {
                Ok(d / e)
            }
        })
        .collect()
}

/// One multiplicative EM update.
///
/// Days with no detection probability inside the window are left unchanged.
pub fn em_step(infections: &[f64], detections: &[f64], delay: &WindowDelay) -> Result<Vec<f64>> {
    check_detections(detections, delay)?;
    let e = expected_detections(infections, delay)?;
    em_update(infections, detections, &e, delay)
}

fn em_update(infections: &[f64], detections: &[f64], expected: &[f64], delay: &WindowDelay) -> Result<Vec<f64>> {
    let ratio = ratios(detections, expected)?;
    let layout = delay.layout();
    let t_max = layout.t as i64;
    Ok(infections
        .iter()
        .enumerate()
        .map(|(j, &x)| {
            let b = delay.observed_mass(j);
            if b <= 0.0 {
                return x;
            }
            let s = layout.latent_day(j);
            let acc: f64 = (1..=layout.k_m)
                .filter_map(|k| {
                    let t = s + k as i64;
                    (1..=t_max).contains(&t).then(|| {
                        let idx = (t - 1) as usize;
                        // Multiply before dividing so that a unit kernel inverts exactly.
                        if ratio[idx] == 0.0 {
                            0.0
                        } else {
                            x * delay.prob(j, k) * detections[idx] / expected[idx]
                        }
                    })
                })
                .sum();
            acc / b
        })
        .collect())
}

fn check_detections(detections: &[f64], delay: &WindowDelay) -> Result<()> {
    if detections.len() != delay.layout().t {
        return Err(Error::Dimension {
            what: "detections",
            expected: delay.layout().t,
            found: detections.len(),
        });
    }
    if detections.iter().any(|d| !(*d >= 0.0) || !d.is_finite()) {
        return Err(Error::Data("detections must be finite and >= 0".into()));
    }
    Ok(())
}

/// Shifts detections back by `shift` days onto the latent days.
///
/// Days whose shifted source lies outside `1..=T` take the nearest edge value
/// (`linear = false`) or the least-squares line through the nearest seven
/// observed days. Values are floored at [`START_FLOOR`].
pub fn shifted_start(detections: &[f64], delay: &WindowDelay, shift: usize, linear: bool) -> Vec<f64> {
    let layout = delay.layout();
    let t = layout.t as i64;
    let span = 7.min(layout.t);
    let (head_slope, tail_slope) = if linear && span >= 2 {
        (
            edge_slope(&detections[..span]),
            edge_slope(&detections[layout.t - span..]),
        )
    } else {
        (0.0, 0.0)
    };
    (0..layout.n_latent())
        .map(|j| {
            let src = layout.latent_day(j) + shift as i64;
            let v = if src < 1 {
                detections[0] + head_slope * (src - 1) as f64
            } else if src > t {
                detections[layout.t - 1] + tail_slope * (src - t) as f64
            } else {
                detections[(src - 1) as usize]
            };
            v.max(START_FLOOR)
        })
        .collect()
}

fn edge_slope(y: &[f64]) -> f64 {
    let n = y.len() as f64;
    let xm = (n - 1.0) / 2.0;
    let ym = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (i, v) in y.iter().enumerate() {
        let dx = i as f64 - xm;
        sxy += dx * (v - ym);
        sxx += dx * dx;
    }
    sxy / sxx
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Deconvolution {
    /// `Î_s` on the latent days.
    pub estimate: Vec<f64>,
    pub iterations: usize,
    /// Chi-squared statistic after each step.
    pub chi_squared_trace: Vec<f64>,
    /// False when the chi-squared threshold was not reached within `max_iters`.
    pub converged: bool,
}

impl Deconvolution {
    pub fn final_chi_squared(&self) -> f64 {
        self.chi_squared_trace.last().copied().unwrap_or(f64::INFINITY)
    }
}

pub fn em_deconvolve(detections: &[f64], delay: &WindowDelay, config: &DeconvolutionConfig) -> Result<Deconvolution> {
    config.validate()?;
    check_detections(detections, delay)?;
    let mut current = match &config.start {
        Start::ShiftedConstant => shifted_start(detections, delay, config.shift, false),
        Start::ShiftedLinear => shifted_start(detections, delay, config.shift, true),
        Start::Explicit(v) => {
            check_len(v, delay.layout().n_latent())?;
            if v.iter().any(|x| !(*x > 0.0) || !x.is_finite()) {
                return Err(Error::param("start", "explicit start must be positive"));
            }
            v.clone()
        }
    };
    let (limit, threshold) = match config.stopping {
        Stopping::FixedIters(n) => (n, None),
        Stopping::ChiSquaredBelow(x) => (config.max_iters, Some(x)),
    };
    let mut trace = Vec::new();
    let mut expected = expected_detections(&current, delay)?;
    let mut converged = threshold.is_none();
    for _ in 0..limit {
        current = em_update(&current, detections, &expected, delay)?;
        expected = expected_detections(&current, delay)?;
        let chi = chi_squared(detections, &expected);
        trace.push(chi);
        if let Some(x) = threshold {
            if chi < x {
                converged = true;
                break;
            }
        }
    }
    Ok(Deconvolution {
        estimate: current,
        iterations: trace.len(),
        chi_squared_trace: trace,
        converged,
    })
}
