//! The renewal model: Poisson infections driven by past infections, multinomial
//! allocation of each day's infections to detection days, growth-rate analysis
//! and the one-day Markov transition used for prediction.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use rand::Rng;

#[allow(unused_imports)] // shadowed by inherent methods when std is linked
use num_traits::Float;

use crate::distributions::{DelayModel, InfectivityProfile};
use crate::error::{ensure_positive, Error, Result};
use crate::rng::{binomial, multinomial_into, poisson, standard_normal, stream_rng, streams};
use crate::window::Layout;

/// Intensities above this abort simulation.
pub const DEFAULT_DIVERGENCE_CAP: f64 = 1e9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Intensity {
    /// `κ_t = Σ_k w_k I_{t-k}`.
    pub kappa: f64,
    /// `λ_t = R_t κ_t`.
    pub lambda: f64,
}

/// Renewal intensity from a chronological history ending the day before.
pub fn renewal_intensity(history: &[f64], r: f64, profile: &InfectivityProfile) -> Result<Intensity> {
    if history.len() < profile.horizon() {
        return Err(Error::Dimension {
            what: "infection history",
            expected: profile.horizon(),
            found: history.len(),
        });
    }
    if !(r >= 0.0) || !r.is_finite() {
        return Err(Error::param("R", format!("must be finite and >= 0, got {r}")));
    }
    if history.iter().any(|x| !(*x >= 0.0)) {
        return Err(Error::param("history", "infection counts must be >= 0"));
    }
    let kappa = profile.weighted_sum(history);
    Ok(Intensity {
        kappa,
        lambda: r * kappa,
    })
}

fn kappa_at(weights: &[f64], infections: &[u64], i: usize) -> f64 {
    weights
        .iter()
        .enumerate()
        .take(i)
        .map(|(k, w)| w * infections[i - 1 - k] as f64)
        .sum()
}

/// Extends `init` by one Poisson renewal draw per entry of `r`.
///
/// Returns the full series, initial days first.
pub fn simulate_infections<R: Rng + ?Sized>(
    r: &[f64],
    init: &[u64],
    profile: &InfectivityProfile,
    cap: f64,
    rng: &mut R,
) -> Result<Vec<u64>> {
    let mut infections = Vec::with_capacity(init.len() + r.len());
    infections.extend_from_slice(init);
    for (step, &rt) in r.iter().enumerate() {
        let i = infections.len();
        let lambda = rt * kappa_at(profile.weights(), &infections, i);
        if lambda > cap {
            return Err(Error::Divergence {
                day: step as i64,
                value: lambda,
                cap,
            });
        }
        infections.push(poisson(rng, lambda));
    }
    Ok(infections)
}

/// A simulated epidemic on a window layout, with every allocation kept.
#[derive(Debug, Clone, PartialEq)]
pub struct EpidemicPath {
    pub layout: Layout,
    /// `R_s` on the latent days.
    pub r: Vec<f64>,
    /// `I_s` on initial and latent days.
    pub infections: Vec<u64>,
    /// `bands[k-1][i] = A_{s,s+k}` for the `i`-th day of the full window.
    pub bands: Vec<Vec<u64>>,
    /// `A_{s,+}`.
    pub undetected: Vec<u64>,
    /// `D_t` for `t = 1..=T`.
    pub detections: Vec<u64>,
}

impl EpidemicPath {
    /// `A_{s,t}` with absolute days.
    pub fn allocation(&self, s: i64, t: i64) -> u64 {
        let lag = t - s;
        if lag < 1 || lag > self.layout.k_m as i64 || s < self.layout.first_init_day() {
            return 0;
        }
        self.bands[lag as usize - 1][self.layout.total_index(s)]
    }

    pub fn latent_infections(&self) -> &[u64] {
        &self.infections[self.layout.k_w..]
    }

    pub fn initial_infections(&self) -> &[u64] {
        &self.infections[..self.layout.k_w]
    }

    /// Detections of day `s` that fall inside `1..=T`.
    pub fn detected_in_window(&self, s: i64) -> u64 {
        (1..=self.layout.k_m as i64)
            .map(|k| s + k)
            .filter(|t| (1..=self.layout.t as i64).contains(t))
            .map(|t| self.allocation(s, t))
            .sum()
    }

    /// Markov state at the end of the window, `x_T`.
    pub fn final_state(&self) -> EpidemicState {
        let l = &self.layout;
        let t = l.t as i64;
        let n = l.n_total();
        let infections = self.infections[n - l.k_w..].to_vec();
        let detected = (1..=l.k_m).map(|k| self.allocation(t - k as i64, t)).collect();
        let pending = (t + 1 - l.k_m as i64..t)
            .map(|s| {
                let seen: u64 = (s + 1..=t).map(|u| self.allocation(s, u)).sum();
                self.infections[l.total_index(s)] - seen
            })
            .collect();
        EpidemicState {
            day: t,
            log_r: self.r.last().copied().unwrap_or(1.0).ln(),
            infections,
            detected,
            pending,
        }
    }
}

/// Simulates infections and their allocations over a window.
///
/// `r` covers the latent days `1-K_m..=T-1` and `init` the `K_w` initial days.
/// Delay probabilities are looked up by absolute day.
pub fn simulate_path<R: Rng + ?Sized>(
    t: usize,
    r: &[f64],
    init: &[u64],
    profile: &InfectivityProfile,
    delay: &dyn DelayModel,
    cap: f64,
    rng: &mut R,
) -> Result<EpidemicPath> {
    let layout = Layout::for_models(t, profile, delay)?;
    if r.len() != layout.n_latent() {
        return Err(Error::Dimension {
            what: "R series",
            expected: layout.n_latent(),
            found: r.len(),
        });
    }
    if init.len() != layout.k_w {
        return Err(Error::Dimension {
            what: "initial infections",
            expected: layout.k_w,
            found: init.len(),
        });
    }
    if r.iter().any(|x| !(*x >= 0.0) || !x.is_finite()) {
        return Err(Error::param("R", "reproduction numbers must be finite and >= 0"));
    }
    let infections = simulate_infections(r, init, profile, cap, rng).map_err(|e| match e {
        Error::Divergence { day, value, cap } => Error::Divergence {
            day: day + layout.first_latent_day(),
            value,
            cap,
        },
        other => other,
    })?;

    let n = layout.n_total();
    let k_m = layout.k_m;
    let mut bands = vec![vec![0u64; n]; k_m];
    let mut undetected = vec![0u64; n];
    let mut probs = vec![0.0; k_m + 1];
    let mut cells = vec![0u64; k_m + 1];
    for i in 0..n {
        let s = layout.total_day(i);
        for k in 1..=k_m {
            probs[k - 1] = delay.prob(s, k);
        }
        probs[k_m] = delay.nondetect(s);
        multinomial_into(rng, infections[i], &probs, &mut cells);
        for k in 0..k_m {
            bands[k][i] = cells[k];
        }
        undetected[i] = cells[k_m];
    }

    let mut detections = vec![0u64; t];
    for (idx, d) in detections.iter_mut().enumerate() {
        let day = idx as i64 + 1;
        *d = (1..=k_m)
            .map(|k| bands[k - 1][layout.total_index(day - k as i64)])
            .sum();
    }
    Ok(EpidemicPath {
        layout,
        r: r.to_vec(),
        infections,
        bands,
        undetected,
        detections,
    })
}

/// Unique positive `ρ` with `1/R = Σ_k w_k ρ^{-k}`.
///
/// Infections under a constant reproduction number grow asymptotically like
/// `ρ^t` in expectation.
pub fn growth_rate(r: f64, profile: &InfectivityProfile) -> Result<f64> {
    ensure_positive("R", r)?;
    let excess = |rho: f64| {
        let x = 1.0 / rho;
        let poly = profile.weights().iter().rev().fold(0.0, |acc, w| (acc + w) * x);
        r * poly - 1.0
    };
    let (mut lo, mut hi) = (1e-6, 10.0);
    if excess(lo) <= 0.0 || excess(hi) >= 0.0 {
        return Err(Error::Numerical(format!(
            "growth rate for R = {r} lies outside [{lo}, {hi}]"
        )));
    }
    while hi - lo > 1e-12 {
        let mid = 0.5 * (lo + hi);
        if excess(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Monte Carlo moments of `I_t` under a constant reproduction number.
#[derive(Debug, Clone, PartialEq)]
pub struct VarianceReport {
    pub mean: Vec<f64>,
    /// `Var(I_t) / E(I_t)^2`.
    pub relative_variance: Vec<f64>,
    /// `Var(I_t) / E(I_t)`.
    pub dispersion: Vec<f64>,
    /// Coefficient of variation of `relative_variance` over the last quarter.
    pub tail_cv: f64,
}

/// Simulates `replicates` paths of length `horizon` from `K_w` days at `init_level`.
///
/// Entry `t - 1` of each vector describes day `t` after the initial days.
pub fn variance_growth_check(
    r: f64,
    profile: &InfectivityProfile,
    init_level: u64,
    horizon: usize,
    replicates: usize,
    seed: u64,
) -> Result<VarianceReport> {
    ensure_positive("R", r)?;
    if horizon < 4 || replicates < 2 {
        return Err(Error::param(
            "replicates",
            "need horizon >= 4 and at least 2 replicates",
        ));
    }
    let k_w = profile.horizon();
    let init = vec![init_level; k_w];
    let rs = vec![r; horizon];
    let mut sum = vec![0.0; horizon];
    let mut sumsq = vec![0.0; horizon];
    for rep in 0..replicates {
        let mut rng = stream_rng(seed, streams::MONTE_CARLO + rep as u64);
        let path = simulate_infections(&rs, &init, profile, DEFAULT_DIVERGENCE_CAP, &mut rng)?;
        for (t, &x) in path[k_w..].iter().enumerate() {
            let x = x as f64;
            sum[t] += x;
            sumsq[t] += x * x;
        }
    }
    let n = replicates as f64;
    let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
    let var: Vec<f64> = sumsq
        .iter()
        .zip(&mean)
        .map(|(q, m)| (q - n * m * m) / (n - 1.0))
        .collect();
    let relative_variance: Vec<f64> = var.iter().zip(&mean).map(|(v, m)| v / (m * m)).collect();
    let dispersion: Vec<f64> = var.iter().zip(&mean).map(|(v, m)| v / m).collect();
    let tail = &relative_variance[horizon - horizon / 4..];
    let tm = tail.iter().sum::<f64>() / tail.len() as f64;
    let tv = tail.iter().map(|x| (x - tm) * (x - tm)).sum::<f64>() / (tail.len() as f64 - 1.0).max(1.0);
    Ok(VarianceReport {
        mean,
        relative_variance,
        dispersion,
        tail_cv: tv.sqrt() / tm,
    })
}

/// Markov state `x_t` of the renewal model with allocation.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct EpidemicState {
    /// The day `t` this state describes.
    pub day: i64,
    /// `L_{t-1}`.
    pub log_r: f64,
    /// `I_{t-K_w..t-1}`, oldest first.
    pub infections: Vec<u64>,
    /// `A_{t-k,t}` at index `k - 1`.
    pub detected: Vec<u64>,
    /// `U_{s,t}` for `s = t+1-K_m..t-1`, oldest first.
    pub pending: Vec<u64>,
}

impl EpidemicState {
    /// `D_t`.
    pub fn detections(&self) -> u64 {
        self.detected.iter().sum()
    }

    pub fn check(&self, k_w: usize, k_m: usize) -> Result<()> {
        if self.infections.len() != k_w || self.detected.len() != k_m || self.pending.len() + 1 != k_m {
            return Err(Error::State(format!(
                "state shape ({}, {}, {}) does not match K_w = {k_w}, K_m = {k_m}",
                self.infections.len(),
                self.detected.len(),
                self.pending.len()
            )));
        }
        if !self.log_r.is_finite() {
            return Err(Error::State(format!("log R is {}", self.log_r)));
        }
        // U_{t-1,t} cannot exceed I_{t-1}; older days are checked the same way
        // where their infections are still in view.
        for (idx, &u) in self.pending.iter().enumerate() {
            let s = self.day + 1 - k_m as i64 + idx as i64;
            let back = (self.day - s) as usize;
            if back <= k_w && u > self.infections[k_w - back] {
                return Err(Error::State(format!(
                    "{u} infections of day {s} pending but only {} occurred",
                    self.infections[k_w - back]
                )));
            }
        }
        Ok(())
    }
}

/// Draws `x_{t+1}` given `x_t`.
///
/// Samples `L_t ~ N(L_{t-1}, τ²)`, `I_t ~ Poisson(e^{L_t} κ_t)`, then the
/// detections on day `t+1` of every day still carrying undetected infections.
pub fn predictive_step<R: Rng + ?Sized>(
    state: &EpidemicState,
    tau: f64,
    profile: &InfectivityProfile,
    delay: &dyn DelayModel,
    rng: &mut R,
) -> Result<EpidemicState> {
    let k_w = profile.horizon();
    let k_m = delay.max_lag();
    state.check(k_w, k_m)?;
    if !(tau >= 0.0) {
        return Err(Error::param("tau", "must be >= 0"));
    }
    let t = state.day;
    let log_r = state.log_r + tau * standard_normal(rng);
    let kappa = profile.weighted_sum(&state.infections.iter().map(|&x| x as f64).collect::<Vec<_>>());
    let lambda = log_r.exp() * kappa;
    if !(lambda <= DEFAULT_DIVERGENCE_CAP) {
        return Err(Error::Divergence {
            day: t,
            value: lambda,
            cap: DEFAULT_DIVERGENCE_CAP,
        });
    }
    let new_infections = poisson(rng, lambda);

    let mut detected = vec![0u64; k_m];
    let mut pending = Vec::with_capacity(k_m - 1);
    // Days s = t+1-K_m ..= t-1 move one day closer to the end of their delay.
    for (idx, &u) in state.pending.iter().enumerate() {
        let s = t + 1 - k_m as i64 + idx as i64;
        let lag = (t + 1 - s) as usize;
        let remaining: f64 = (lag..=k_m).map(|k| delay.prob(s, k)).sum::<f64>() + delay.nondetect(s);
        let a = if u == 0 {
            0
        } else if remaining <= 0.0 {
            return Err(Error::State(format!(
                "{u} infections of day {s} pending with no remaining delay mass"
            )));
        } else {
            binomial(rng, u, (delay.prob(s, lag) / remaining).min(1.0))
        };
        detected[lag - 1] = a;
        if lag < k_m {
            pending.push(u - a);
        }
    }
    let first = binomial(rng, new_infections, delay.prob(t, 1));
    detected[0] = first;
    if k_m > 1 {
        pending.push(new_infections - first);
    }

    let mut infections = Vec::with_capacity(k_w);
    infections.extend_from_slice(&state.infections[1..]);
    infections.push(new_infections);
    Ok(EpidemicState {
        day: t + 1,
        log_r,
        infections,
        detected,
        pending,
    })
}
