//! Two-block Metropolis–Hastings sampler for log reproduction numbers and
//! latent infections.
//!
//! Each sweep first updates infections and their allocation to detection days
//! with an independence proposal built around a scaffold `ψ*`, then updates
//! the log reproduction numbers `L` with a Gaussian proposal from a
//! second-order expansion of the target around the current `L`.
//!
//! The state keeps per-day detected totals `B_s` instead of the allocation
//! matrix (the acceptance ratio depends on allocations only through them) and
//! the allocation column of the last observed day, which is all the final
//! Markov state needs.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use rand::Rng;
use serde::{Deserialize, Serialize};

#[allow(unused_imports)] // shadowed by inherent methods when std is linked
use num_traits::Float;

use crate::deconvolution::{em_step, shifted_start};
use crate::distributions::{DelayModel, InfectivityProfile};
use crate::error::{Error, Result};
use crate::model::{predictive_step, EpidemicState};
use crate::rng::{multinomial_into, poisson, standard_normal, stream_rng, streams, uniform};
use crate::window::{Layout, WindowDelay};

pub const DEFAULT_SIGMA: f64 = 1.5;
pub const DEFAULT_TAU: f64 = 0.025;
/// Floor applied to scaffold intensities.
pub const PSI_FLOOR: f64 = 1e-12;
/// Floor applied to prior means of initial infections.
pub const LAMBDA0_FLOOR: f64 = 1e-3;
/// Below this burn-in acceptance rate of the infection block a warning is issued.
pub const LOW_ACCEPTANCE: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Hyperparams {
    /// Prior sd of the first log reproduction number.
    pub sigma: f64,
    /// Random-walk sd of daily log-R increments.
    pub tau: f64,
    /// Prior means of the `K_w` initial infection counts.
    pub lambda0: Vec<f64>,
}

impl Hyperparams {
    pub fn new(sigma: f64, tau: f64, lambda0: Vec<f64>) -> Result<Self> {
        let h = Hyperparams { sigma, tau, lambda0 };
        h.validate()?;
        Ok(h)
    }

    pub fn validate(&self) -> Result<()> {
        crate::error::ensure_positive("sigma", self.sigma)?;
        crate::error::ensure_positive("tau", self.tau)?;
        if self.lambda0.iter().any(|x| !(*x > 0.0) || !x.is_finite()) {
            return Err(Error::param("lambda0", "prior means must be finite and > 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct McmcConfig {
    pub iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub chains: usize,
    /// Days by which detections are shifted back for the starting infections.
    pub init_shift: usize,
    /// EM steps applied to the shifted detections at initialization.
    pub init_em_steps: usize,
}

impl Default for McmcConfig {
    fn default() -> Self {
        McmcConfig {
            iterations: 20_000,
            burn_in: 5_000,
            thin: 10,
            chains: 2,
            init_shift: 10,
            init_em_steps: 10,
        }
    }
}

impl McmcConfig {
    pub fn validate(&self) -> Result<()> {
        if self.thin == 0 {
            return Err(Error::param("thin", "must be >= 1"));
        }
        if self.chains == 0 {
            return Err(Error::param("chains", "must be >= 1"));
        }
        if self.iterations <= self.burn_in {
            return Err(Error::param(
                "iterations",
                format!(
                    "no draws are retained: iterations ({}) must exceed burn_in ({})",
                    self.iterations, self.burn_in
                ),
            ));
        }
        if self.draws_per_chain() == 0 {
            return Err(Error::param("thin", "thinning leaves no draws after burn-in"));
        }
        Ok(())
    }

    pub fn draws_per_chain(&self) -> usize {
        self.iterations.saturating_sub(self.burn_in) / self.thin.max(1)
    }
}

/// `x` rounded to the nearest integer, ties to even.
pub fn round_half_even(x: f64) -> u64 {
    libm::rint(x.max(0.0)) as u64
}

#[derive(Debug, Clone, PartialEq)]
pub struct Lambda0 {
    pub values: Vec<f64>,
    pub warning: Option<String>,
}

/// Constant prior mean for the initial infections.
///
/// Uses the mean of the seven detections before the window when given,
/// otherwise the mean of the first seven days of the starting infections
/// built by [`starting_infections`].
pub fn make_lambda0(
    pre_window: Option<&[f64]>,
    detections: &[f64],
    delay: &WindowDelay,
    k_w: usize,
    config: &McmcConfig,
) -> Result<Lambda0> {
    let level = match pre_window {
        Some(pre) if !pre.is_empty() => {
            if pre.iter().any(|x| !(*x >= 0.0) || !x.is_finite()) {
                return Err(Error::Data("pre-window counts must be finite and >= 0".into()));
            }
            pre.iter().sum::<f64>() / pre.len() as f64
        }
        _ => {
            let start = starting_infections(detections, delay, config)?;
            let n = start.len().min(7);
            start[..n].iter().sum::<f64>() / n as f64
        }
    };
    let (level, warning) = if level < LAMBDA0_FLOOR {
        (
            LAMBDA0_FLOOR,
            Some(format!(
                "prior mean of initial infections {level} floored at {LAMBDA0_FLOOR}"
            )),
        )
    } else {
        (level, None)
    };
    Ok(Lambda0 {
        values: vec![level; k_w],
        warning,
    })
}

/// Shifted detections refined by a few EM steps, on the latent days.
pub fn starting_infections(detections: &[f64], delay: &WindowDelay, config: &McmcConfig) -> Result<Vec<f64>> {
    let mut start = shifted_start(detections, delay, config.init_shift, false);
    for _ in 0..config.init_em_steps {
        start = em_step(&start, detections, delay)?;
    }
    Ok(start)
}

/// Everything fixed during a fit: window geometry, rounded detections, models.
#[derive(Debug, Clone)]
pub struct Problem {
    pub layout: Layout,
    pub delay: WindowDelay,
    pub weights: Vec<f64>,
    /// `D̄_t` rounded half-to-even.
    pub detections: Vec<u64>,
    pub hyper: Hyperparams,
}

impl Problem {
    pub fn new(
        smoothed: &[f64],
        profile: &InfectivityProfile,
        delay: &dyn DelayModel,
        hyper: Hyperparams,
    ) -> Result<Self> {
        hyper.validate()?;
        if let Some(i) = smoothed.iter().position(|x| !(*x >= 0.0) || !x.is_finite()) {
            return Err(Error::Data(format!(
                "smoothed count at position {i} is negative or not finite"
            )));
        }
        let layout = Layout::for_models(smoothed.len(), profile, delay)?;
        if hyper.lambda0.len() != layout.k_w {
            return Err(Error::Dimension {
                what: "lambda0",
                expected: layout.k_w,
                found: hyper.lambda0.len(),
            });
        }
        Ok(Problem {
            layout,
            delay: WindowDelay::new(layout, delay)?,
            weights: profile.weights().to_vec(),
            detections: smoothed.iter().map(|&x| round_half_even(x)).collect(),
            hyper,
        })
    }

    /// `κ_s` for every latent day.
    pub fn kappa(&self, infections: &[u64]) -> Vec<f64> {
        let k_w = self.layout.k_w;
        (0..self.layout.n_latent())
            .map(|j| {
                let i = j + k_w;
                self.weights
                    .iter()
                    .enumerate()
                    .map(|(k, w)| w * infections[i - 1 - k] as f64)
                    .sum()
            })
            .collect()
    }

    fn detections_f64(&self) -> Vec<f64> {
        self.detections.iter().map(|&d| d as f64).collect()
    }
}

/// One configuration of the sampler.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentState {
    /// `L_s` on the latent days.
    pub log_r: Vec<f64>,
    /// `I_s` on initial and latent days.
    pub infections: Vec<u64>,
    /// `B_s = Σ_{t ≤ T} A_{s,t}` on the latent days.
    pub detected: Vec<u64>,
    /// `A_{T-k,T}` at index `k - 1`.
    pub last_column: Vec<u64>,
    pub kappa: Vec<f64>,
    pub lambda: Vec<f64>,
}

impl LatentState {
    fn refresh_lambda(&mut self) {
        for ((lam, l), k) in self.lambda.iter_mut().zip(&self.log_r).zip(&self.kappa) {
            *lam = l.exp() * k;
        }
    }

    /// Recomputes the cached intensities and compares them with the stored ones.
    pub fn check_cache(&self, problem: &Problem) -> Result<()> {
        let kappa = problem.kappa(&self.infections);
        for (j, (a, b)) in kappa.iter().zip(&self.kappa).enumerate() {
            if a != b {
                return Err(Error::State(format!(
                    "cached kappa {b} differs from {a} at latent index {j}"
                )));
            }
            let lam = self.log_r[j].exp() * a;
            if lam != self.lambda[j] {
                return Err(Error::State(format!("cached lambda differs at latent index {j}")));
            }
        }
        let k_w = problem.layout.k_w;
        for (j, &b) in self.detected.iter().enumerate() {
            if b > self.infections[j + k_w] {
                return Err(Error::State(format!("B exceeds I at latent index {j}")));
            }
        }
        Ok(())
    }

    /// Markov state `x_T`, with `U_{s,T} = I_s - B_s`.
    pub fn final_state(&self, layout: &Layout) -> EpidemicState {
        let n = layout.n_total();
        let k_w = layout.k_w;
        let k_m = layout.k_m;
        let pending = (layout.n_latent() + 1 - k_m..layout.n_latent())
            .map(|j| self.infections[j + k_w] - self.detected[j])
            .collect();
        EpidemicState {
            day: layout.t as i64,
            log_r: *self.log_r.last().expect("latent window is nonempty"),
            infections: self.infections[n - k_w..].to_vec(),
            detected: self.last_column.clone(),
            pending,
        }
    }
}

/// Starting state: prior draws for the initial days, EM-based infections for
/// the latent days and log-R from their ratio to the renewal sums.
pub fn init_chain<R: Rng + ?Sized>(problem: &Problem, config: &McmcConfig, rng: &mut R) -> Result<LatentState> {
    let layout = &problem.layout;
    let k_w = layout.k_w;
    let k_m = layout.k_m;
    let n = layout.n_total();
    let start = starting_infections(&problem.detections_f64(), &problem.delay, config)?;
    let mut values = vec![0.0; n];
    for (v, lam) in values.iter_mut().zip(&problem.hyper.lambda0) {
        *v = poisson(rng, *lam) as f64;
    }
    values[k_w..].copy_from_slice(&start);

    // Blend log-incidence linearly across the junction of prior and EM days.
    let lo = (-(k_m as i64) - 1).max(layout.first_init_day());
    let hi = (2 - k_m as i64).min(layout.last_latent_day());
    if hi - lo >= 2 {
        let (a, b) = (layout.total_index(lo), layout.total_index(hi));
        let (la, lb) = (values[a].max(0.5).ln(), values[b].max(0.5).ln());
        for i in a + 1..b {
            let f = (i - a) as f64 / (b - a) as f64;
            values[i] = (la + f * (lb - la)).exp();
        }
    }
    let mut infections: Vec<u64> = values.iter().map(|&v| round_half_even(v)).collect();

    // A positive count needs a positive renewal sum.
    for i in k_w..n {
        let kappa: f64 = problem
            .weights
            .iter()
            .enumerate()
            .map(|(k, w)| w * infections[i - 1 - k] as f64)
            .sum();
        if kappa == 0.0 && infections[i] > 0 {
            for k in 1..=k_w {
                infections[i - k] = infections[i - k].max(1);
            }
        }
    }

    let kappa = problem.kappa(&infections);
    let guarded: Vec<f64> = kappa
        .iter()
        .enumerate()
        .map(|(j, k)| ((infections[j + k_w] as f64).max(0.5) / k.max(0.5)).ln())
        .collect();
    let log_r = conditional_mode(
        &guarded,
        &infections[k_w..],
        &kappa,
        problem.hyper.sigma,
        problem.hyper.tau,
    )?;
    let detected: Vec<u64> = (0..layout.n_latent())
        .map(|j| round_half_even(infections[j + k_w] as f64 * problem.delay.observed_mass(j)))
        .collect();
    // Split the last day's detections in proportion to I_s m_{s,T}.
    let t = layout.t as i64;
    let shares: Vec<f64> = (1..=k_m)
        .map(|k| {
            let j = layout.latent_index(t - k as i64);
            infections[j + k_w] as f64 * problem.delay.prob(j, k)
        })
        .collect();
    let total: f64 = shares.iter().sum();
    let d_t = problem.detections[layout.t - 1];
    let last_column = shares
        .iter()
        .map(|s| {
            if total > 0.0 {
                round_half_even(d_t as f64 * s / total)
            } else {
                0
            }
        })
        .collect();
    let mut state = LatentState {
        log_r,
        infections,
        detected,
        last_column,
        lambda: vec![0.0; kappa.len()],
        kappa,
    };
    state.refresh_lambda();
    Ok(state)
}

/// Mode of `L` given the infections, by damped Newton steps from `start`.
///
/// The per-day guard ratio is jagged at small counts; under a tight random
/// walk the Taylor proposal cannot leave such a point, so chains start here.
pub fn conditional_mode(start: &[f64], infections: &[u64], kappa: &[f64], sigma: f64, tau: f64) -> Result<Vec<f64>> {
    let target = |l: &[f64]| log_target_l(&ExpLink, l, infections, kappa, sigma, tau);
    let mut x = start.to_vec();
    let mut fx = target(&x);
    for _ in 0..MODE_MAX_STEPS {
        let full = GaussianProposal::new(&ExpLink, &x, infections, kappa, sigma, tau)?.mean();
        let mut step = 1.0;
        let (next, fnext) = loop {
            let y: Vec<f64> = x.iter().zip(&full).map(|(a, b)| a + step * (b - a)).collect();
            let fy = target(&y);
            if fy >= fx || step < 1e-10 {
                break (y, fy);
            }
            step *= 0.5;
        };
        if !(fnext >= fx) {
            break;
        }
        let change = x.iter().zip(&next).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        x = next;
        fx = fnext;
        if change < MODE_TOL {
            break;
        }
    }
    Ok(x)
}

const MODE_MAX_STEPS: usize = 100;
const MODE_TOL: f64 = 1e-9;

/// Auxiliary intensities shaping the allocation proposal.
#[derive(Debug, Clone, PartialEq)]
pub struct Scaffold {
    /// `ψ*_s` on initial and latent days.
    pub psi: Vec<f64>,
    /// `π*_t = Σ_s ψ*_s m_{s,t}`.
    pub pi: Vec<f64>,
    /// Entries raised to [`PSI_FLOOR`].
    pub floored: usize,
}

impl Scaffold {
    /// `ν*_{s,t}` for latent index `j`.
    pub fn nu(&self, problem: &Problem, j: usize, t: i64) -> f64 {
        let p = self.pi[(t - 1) as usize];
        if p > 0.0 {
            self.psi[j + problem.layout.k_w] * problem.delay.m(j, t) / p
        } else {
            0.0
        }
    }

    fn latent_psi<'a>(&'a self, problem: &Problem) -> &'a [f64] {
        &self.psi[problem.layout.k_w..]
    }
}

/// Renewal recursion of `λ⁰` under `L` on initial and latent days, with the
/// number of entries raised to [`PSI_FLOOR`].
pub fn forward_scaffold(problem: &Problem, log_r: &[f64]) -> (Vec<f64>, usize) {
    let k_w = problem.layout.k_w;
    let n = problem.layout.n_total();
    let mut psi = vec![0.0; n];
    psi[..k_w].copy_from_slice(&problem.hyper.lambda0);
    let mut floored = 0;
    for i in k_w..n {
        let kappa: f64 = problem
            .weights
            .iter()
            .enumerate()
            .map(|(k, w)| w * psi[i - 1 - k])
            .sum();
        let v = log_r[i - k_w].exp() * kappa;
        psi[i] = if v < PSI_FLOOR {
            floored += 1;
            PSI_FLOOR
        } else {
            v
        };
    }
    (psi, floored)
}

/// [`forward_scaffold`] refined by one EM step against the detections.
pub fn build_scaffold(problem: &Problem, log_r: &[f64]) -> Result<Scaffold> {
    let k_w = problem.layout.k_w;
    let (mut psi, mut floored) = forward_scaffold(problem, log_r);
    let refined = em_step(&psi[k_w..], &problem.detections_f64(), &problem.delay)?;
    for (slot, v) in psi[k_w..].iter_mut().zip(refined) {
        *slot = if v < PSI_FLOOR || !v.is_finite() {
            floored += 1;
            PSI_FLOOR
        } else {
            v
        };
    }
    let pi = crate::deconvolution::expected_detections(&psi[k_w..], &problem.delay)?;
    Ok(Scaffold { psi, pi, floored })
}

/// A proposed infection/allocation configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct IaCandidate {
    pub infections: Vec<u64>,
    pub detected: Vec<u64>,
    pub last_column: Vec<u64>,
    pub kappa: Vec<f64>,
    pub lambda: Vec<f64>,
}

/// Draws allocations column by column from `ν*`, initial infections from the
/// prior, and the undetected remainder of each day from the renewal intensity.
pub fn propose_ia<R: Rng + ?Sized>(problem: &Problem, scaffold: &Scaffold, log_r: &[f64], rng: &mut R) -> IaCandidate {
    let layout = &problem.layout;
    let k_w = layout.k_w;
    let k_m = layout.k_m;
    let n_latent = layout.n_latent();
    let mut detected = vec![0u64; n_latent];
    let mut last_column = vec![0u64; k_m];
    let mut probs = vec![0.0; k_m];
    let mut cells = vec![0u64; k_m];
    for t in 1..=layout.t as i64 {
        let src = problem.delay.sources(t);
        let m = src.len();
        for (slot, j) in probs.iter_mut().zip(src.clone()) {
            *slot = scaffold.psi[j + k_w] * problem.delay.m(j, t);
        }
        let d = problem.detections[(t - 1) as usize];
        multinomial_into(rng, d, &probs[..m], &mut cells[..m]);
        for (c, j) in cells[..m].iter().zip(src.clone()) {
            detected[j] += c;
        }
        if t == layout.t as i64 {
            for (c, j) in cells[..m].iter().zip(src) {
                let lag = (t - layout.latent_day(j)) as usize;
                last_column[lag - 1] = *c;
            }
        }
    }
    let mut infections = vec![0u64; layout.n_total()];
    for (slot, lam) in infections.iter_mut().zip(&problem.hyper.lambda0) {
        *slot = poisson(rng, *lam);
    }
    let mut kappa = vec![0.0; n_latent];
    let mut lambda = vec![0.0; n_latent];
    for j in 0..n_latent {
        let i = j + k_w;
        let k: f64 = problem
            .weights
            .iter()
            .enumerate()
            .map(|(k, w)| w * infections[i - 1 - k] as f64)
            .sum();
        let lam = log_r[j].exp() * k;
        kappa[j] = k;
        lambda[j] = lam;
        let hidden = (1.0 - problem.delay.observed_mass(j)).max(0.0) * lam;
        infections[i] = detected[j] + poisson(rng, hidden);
    }
    IaCandidate {
        infections,
        detected,
        last_column,
        kappa,
        lambda,
    }
}

/// The pieces of a configuration entering the infection-block acceptance ratio.
#[derive(Debug, Clone, Copy)]
pub struct IaView<'a> {
    pub detected: &'a [u64],
    pub lambda: &'a [f64],
    /// Scaffold on the latent days.
    pub psi: &'a [f64],
    pub pi: &'a [f64],
}

fn term(count: u64, num: f64, den: f64) -> Option<f64> {
    if count == 0 {
        Some(0.0)
    } else if num > 0.0 && den > 0.0 {
        Some(count as f64 * (num / den).ln())
    } else {
        None
    }
}

/// Log acceptance ratio of moving from `current` to `candidate`.
///
/// Each side carries the scaffold it was proposed under. A candidate with a
/// detected infection on a day of zero intensity has ratio `-∞`; the same
/// situation in the current state is an error.
pub fn log_accept_ia(problem: &Problem, current: IaView<'_>, candidate: IaView<'_>) -> Result<f64> {
    let b = problem.delay.observed_masses();
    let mut total = 0.0;
    for j in 0..b.len() {
        let cur = term(current.detected[j], current.lambda[j], current.psi[j]).ok_or_else(|| {
            Error::Numerical(format!(
                "current state has {} detected infections at latent index {j} with zero intensity",
                current.detected[j]
            ))
        })?;
        let Some(cand) = term(candidate.detected[j], candidate.lambda[j], candidate.psi[j]) else {
            return Ok(f64::NEG_INFINITY);
        };
        total += cand - cur - b[j] * (candidate.lambda[j] - current.lambda[j]);
    }
    for (t, &d) in problem.detections.iter().enumerate() {
        total += term(d, candidate.pi[t], current.pi[t])
            .ok_or_else(|| Error::Numerical(format!("zero scaffold mass on observed day {}", t + 1)))?;
    }
    Ok(total)
}

/// `x log(λ/ψ) - (λ - ψ)`.
fn ell(x: f64, lambda: f64, psi: f64) -> f64 {
    let log_part = if x == 0.0 { 0.0 } else { x * (lambda / psi).ln() };
    log_part - (lambda - psi)
}

/// The same ratio written as a sum of Poisson log-likelihood ratios; agrees
/// with [`log_accept_ia`] when each `π` is the convolution of its `ψ`.
pub fn log_accept_ia_lr(problem: &Problem, current: IaView<'_>, candidate: IaView<'_>) -> f64 {
    let b = problem.delay.observed_masses();
    let mut total = 0.0;
    for j in 0..b.len() {
        total += ell(
            candidate.detected[j] as f64,
            b[j] * candidate.lambda[j],
            b[j] * candidate.psi[j],
        );
        total += ell(
            current.detected[j] as f64,
            b[j] * current.psi[j],
            b[j] * current.lambda[j],
        );
    }
    for (t, &d) in problem.detections.iter().enumerate() {
        total += ell(d as f64, candidate.pi[t], current.pi[t]);
    }
    total
}

/// Map from log-R to the multiplier of `κ` in the Poisson mean, with derivatives.
pub trait Link {
    fn value(&self, l: f64) -> f64;
    fn d1(&self, l: f64) -> f64;
    fn d2(&self, l: f64) -> f64;
}

/// `exp(L)`, the model's link.
#[derive(Debug, Clone, Copy, Default)]
pub struct ExpLink;

impl Link for ExpLink {
    fn value(&self, l: f64) -> f64 {
        l.exp()
    }
    fn d1(&self, l: f64) -> f64 {
        l.exp()
    }
    fn d2(&self, l: f64) -> f64 {
        l.exp()
    }
}

/// Cholesky factor `U` of a symmetric tridiagonal matrix, `Q = UᵀU`.
#[derive(Debug, Clone, PartialEq)]
pub struct TridiagonalCholesky {
    /// `U_{i,i}`.
    pub diag: Vec<f64>,
    /// `U_{i,i+1}`.
    pub upper: Vec<f64>,
}

impl TridiagonalCholesky {
    /// Factors the matrix with diagonal `d` and off-diagonal `e`.
    pub fn factor(d: &[f64], e: &[f64]) -> Result<Self> {
        let n = d.len();
        if e.len() + 1 != n.max(1) {
            return Err(Error::Dimension {
                what: "off-diagonal",
                expected: n.saturating_sub(1),
                found: e.len(),
            });
        }
        let mut diag = vec![0.0; n];
        let mut upper = vec![0.0; n.saturating_sub(1)];
        let mut carry = 0.0;
        for i in 0..n {
            let pivot = d[i] - carry;
            if !(pivot > 0.0) || !pivot.is_finite() {
                return Err(Error::Numerical(format!(
                    "precision matrix not positive definite at row {i} (pivot {pivot})"
                )));
            }
            diag[i] = pivot.sqrt();
            if i + 1 < n {
                upper[i] = e[i] / diag[i];
                carry = upper[i] * upper[i];
            }
        }
        Ok(TridiagonalCholesky { diag, upper })
    }

    /// Solves `Uᵀ y = b`.
    pub fn solve_transpose(&self, b: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; b.len()];
        for i in 0..b.len() {
            let prev = if i > 0 { self.upper[i - 1] * y[i - 1] } else { 0.0 };
            y[i] = (b[i] - prev) / self.diag[i];
        }
        y
    }

    /// Solves `U x = y`.
    pub fn solve(&self, y: &[f64]) -> Vec<f64> {
        let n = y.len();
        let mut x = vec![0.0; n];
        for i in (0..n).rev() {
            let next = if i + 1 < n { self.upper[i] * x[i + 1] } else { 0.0 };
            x[i] = (y[i] - next) / self.diag[i];
        }
        x
    }

    /// `U x`.
    pub fn mul(&self, x: &[f64]) -> Vec<f64> {
        (0..x.len())
            .map(|i| {
                let next = if i + 1 < x.len() { self.upper[i] * x[i + 1] } else { 0.0 };
                self.diag[i] * x[i] + next
            })
            .collect()
    }

    /// `½ log det Q`.
    pub fn half_log_det(&self) -> f64 {
        self.diag.iter().map(|u| u.ln()).sum()
    }
}

/// Gaussian approximation `N(Q⁻¹b, Q⁻¹)` of the conditional of `L` around a centre.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianProposal {
    pub diag: Vec<f64>,
    pub off: Vec<f64>,
    pub linear: Vec<f64>,
    pub chol: TridiagonalCholesky,
    /// `U⁻ᵀ b`.
    shift: Vec<f64>,
}

impl GaussianProposal {
    pub fn new<K: Link + ?Sized>(
        link: &K,
        centre: &[f64],
        infections: &[u64],
        kappa: &[f64],
        sigma: f64,
        tau: f64,
    ) -> Result<Self> {
        let n = centre.len();
        let prec_rw = 1.0 / (tau * tau);
        let mut diag = vec![0.0; n];
        let mut linear = vec![0.0; n];
        for i in 0..n {
            let c = centre[i];
            let curv = link.d2(c) * kappa[i];
            let mut d = curv;
            if i == 0 {
                d += 1.0 / (sigma * sigma);
            }
            if i > 0 {
                d += prec_rw;
            }
            if i + 1 < n {
                d += prec_rw;
            }
            diag[i] = d;
            linear[i] = infections[i] as f64 - kappa[i] * (link.d1(c) - c * link.d2(c));
        }
        let off = vec![-prec_rw; n.saturating_sub(1)];
        let chol = TridiagonalCholesky::factor(&diag, &off)?;
        let shift = chol.solve_transpose(&linear);
        Ok(GaussianProposal {
            diag,
            off,
            linear,
            chol,
            shift,
        })
    }

    /// `Q⁻¹ b`.
    pub fn mean(&self) -> Vec<f64> {
        self.chol.solve(&self.shift)
    }

    /// Draw `U⁻¹(Z + U⁻ᵀb)` with its log density.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> (Vec<f64>, f64) {
        let z: Vec<f64> = (0..self.shift.len()).map(|_| standard_normal(rng)).collect();
        let y: Vec<f64> = z.iter().zip(&self.shift).map(|(a, b)| a + b).collect();
        let x = self.chol.solve(&y);
        let sq: f64 = z.iter().map(|v| v * v).sum();
        (x, self.log_norm() - 0.5 * sq)
    }

    pub fn log_density(&self, x: &[f64]) -> f64 {
        let ux = self.chol.mul(x);
        let sq: f64 = ux.iter().zip(&self.shift).map(|(a, b)| (a - b) * (a - b)).sum();
        self.log_norm() - 0.5 * sq
    }

    fn log_norm(&self) -> f64 {
        self.chol.half_log_det() - 0.5 * self.shift.len() as f64 * (2.0 * core::f64::consts::PI).ln()
    }
}

/// Unnormalized log density of `L` given infections.
pub fn log_target_l<K: Link + ?Sized>(
    link: &K,
    log_r: &[f64],
    infections: &[u64],
    kappa: &[f64],
    sigma: f64,
    tau: f64,
) -> f64 {
    let mut total = -log_r[0] * log_r[0] / (2.0 * sigma * sigma);
    for w in log_r.windows(2) {
        let d = w[1] - w[0];
        total -= d * d / (2.0 * tau * tau);
    }
    for ((l, &i), k) in log_r.iter().zip(infections).zip(kappa) {
        total += i as f64 * l - link.value(*l) * k;
    }
    total
}

#[derive(Debug, Clone, PartialEq)]
pub struct LProposal {
    pub log_r: Vec<f64>,
    /// `log q(L* | L)`.
    pub log_q_forward: f64,
    /// `log q(L | L*)`.
    pub log_q_reverse: f64,
}

pub fn propose_l<K: Link + ?Sized, R: Rng + ?Sized>(
    link: &K,
    log_r: &[f64],
    infections: &[u64],
    kappa: &[f64],
    sigma: f64,
    tau: f64,
    rng: &mut R,
) -> Result<LProposal> {
    let fwd = GaussianProposal::new(link, log_r, infections, kappa, sigma, tau)?;
    let (star, log_q_forward) = fwd.sample(rng);
    let rev = GaussianProposal::new(link, &star, infections, kappa, sigma, tau)?;
    Ok(LProposal {
        log_q_reverse: rev.log_density(log_r),
        log_r: star,
        log_q_forward,
    })
}

#[allow(clippy::too_many_arguments)]
pub fn log_accept_l<K: Link + ?Sized>(
    link: &K,
    infections: &[u64],
    kappa: &[f64],
    current: &[f64],
    proposal: &LProposal,
    sigma: f64,
    tau: f64,
) -> f64 {
    if current == proposal.log_r.as_slice() {
        return 0.0;
    }
    log_target_l(link, &proposal.log_r, infections, kappa, sigma, tau)
        - log_target_l(link, current, infections, kappa, sigma, tau)
        + proposal.log_q_reverse
        - proposal.log_q_forward
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct BlockStats {
    pub proposed: u64,
    pub accepted: u64,
}

impl BlockStats {
    pub fn rate(&self) -> f64 {
        if self.proposed == 0 {
            0.0
        } else {
            self.accepted as f64 / self.proposed as f64
        }
    }

    fn record(&mut self, accepted: bool) {
        self.proposed += 1;
        self.accepted += accepted as u64;
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ChainStats {
    pub infection_block: BlockStats,
    pub log_r_block: BlockStats,
    /// Infection-block acceptance during burn-in.
    pub infection_block_burn_in: BlockStats,
    /// Scaffold entries raised to the floor over the run.
    pub psi_floored: u64,
}

/// Retained draws of one chain.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainOutput {
    pub log_r: Vec<Vec<f64>>,
    pub infections: Vec<Vec<u64>>,
    pub final_states: Vec<EpidemicState>,
    pub stats: ChainStats,
    pub warnings: Vec<String>,
}

fn ia_view<'a>(detected: &'a [u64], lambda: &'a [f64], scaffold: &'a Scaffold, problem: &Problem) -> IaView<'a> {
    IaView {
        detected,
        lambda,
        psi: scaffold.latent_psi(problem),
        pi: &scaffold.pi,
    }
}

/// One sweep: infection block, then log-R block.
pub fn sweep<R: Rng + ?Sized>(
    problem: &Problem,
    state: &mut LatentState,
    stats: &mut ChainStats,
    burn_in: bool,
    rng: &mut R,
) -> Result<()> {
    let scaffold = build_scaffold(problem, &state.log_r)?;
    stats.psi_floored += scaffold.floored as u64;
    let cand = propose_ia(problem, &scaffold, &state.log_r, rng);
    let log_r = log_accept_ia(
        problem,
        ia_view(&state.detected, &state.lambda, &scaffold, problem),
        ia_view(&cand.detected, &cand.lambda, &scaffold, problem),
    )?;
    let accept = log_r >= 0.0 || uniform(rng).ln() < log_r;
    stats.infection_block.record(accept);
    if burn_in {
        stats.infection_block_burn_in.record(accept);
    }
    if accept {
        state.infections = cand.infections;
        state.detected = cand.detected;
        state.last_column = cand.last_column;
        state.kappa = cand.kappa;
        state.lambda = cand.lambda;
    }

    let k_w = problem.layout.k_w;
    let latent = &state.infections[k_w..];
    let (sigma, tau) = (problem.hyper.sigma, problem.hyper.tau);
    let prop = propose_l(&ExpLink, &state.log_r, latent, &state.kappa, sigma, tau, rng)?;
    let log_r = log_accept_l(&ExpLink, latent, &state.kappa, &state.log_r, &prop, sigma, tau);
    let accept = log_r >= 0.0 || uniform(rng).ln() < log_r;
    stats.log_r_block.record(accept);
    if accept {
        state.log_r = prop.log_r;
        state.refresh_lambda();
    }
    Ok(())
}

/// Runs one chain on its own random stream.
pub fn run_chain(problem: &Problem, config: &McmcConfig, seed: u64, chain: usize) -> Result<ChainOutput> {
    config.validate()?;
    let mut rng = stream_rng(seed, streams::CHAIN + chain as u64);
    let mut state = init_chain(problem, config, &mut rng)?;
    let mut stats = ChainStats::default();
    let mut out = ChainOutput {
        log_r: Vec::with_capacity(config.draws_per_chain()),
        infections: Vec::with_capacity(config.draws_per_chain()),
        final_states: Vec::with_capacity(config.draws_per_chain()),
        stats: ChainStats::default(),
        warnings: Vec::new(),
    };
    for it in 1..=config.iterations {
        sweep(problem, &mut state, &mut stats, it <= config.burn_in, &mut rng)?;
        if it == config.burn_in && config.burn_in > 0 && stats.infection_block_burn_in.rate() < LOW_ACCEPTANCE {
            out.warnings.push(format!(
                "chain {chain}: infection-block acceptance {:.4}% during burn-in is below {}%",
                100.0 * stats.infection_block_burn_in.rate(),
                100.0 * LOW_ACCEPTANCE
            ));
        }
        if it > config.burn_in && (it - config.burn_in) % config.thin == 0 && out.log_r.len() < config.draws_per_chain()
        {
            out.log_r.push(state.log_r.clone());
            out.infections.push(state.infections.clone());
            out.final_states.push(state.final_state(&problem.layout));
        }
    }
    out.stats = stats;
    Ok(out)
}

/// Thinned post-burn-in draws pooled over chains, chain by chain.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorSamples {
    pub layout: Layout,
    pub seed: u64,
    pub chains: usize,
    pub draws_per_chain: usize,
    /// `L` on the latent days, one row per draw.
    pub log_r: Vec<Vec<f64>>,
    /// `I` on initial and latent days, one row per draw.
    pub infections: Vec<Vec<u64>>,
    pub final_states: Vec<EpidemicState>,
    pub stats: Vec<ChainStats>,
    pub warnings: Vec<String>,
}

impl PosteriorSamples {
    pub fn from_chains(layout: Layout, seed: u64, outputs: Vec<ChainOutput>) -> Result<Self> {
        let chains = outputs.len();
        let draws_per_chain = outputs.first().map_or(0, |o| o.log_r.len());
        if chains == 0 || draws_per_chain == 0 {
            return Err(Error::param("iterations", "no posterior draws were retained"));
        }
        let mut s = PosteriorSamples {
            layout,
            seed,
            chains,
            draws_per_chain,
            log_r: Vec::new(),
            infections: Vec::new(),
            final_states: Vec::new(),
            stats: Vec::new(),
            warnings: Vec::new(),
        };
        for o in outputs {
            if o.log_r.len() != draws_per_chain {
                return Err(Error::Consistency("chains retained different numbers of draws".into()));
            }
            s.log_r.extend(o.log_r);
            s.infections.extend(o.infections);
            s.final_states.extend(o.final_states);
            s.stats.push(o.stats);
            s.warnings.extend(o.warnings);
        }
        Ok(s)
    }

    pub fn n_draws(&self) -> usize {
        self.log_r.len()
    }

    /// Gelman–Rubin potential scale reduction of `L` per latent day.
    pub fn r_hat(&self) -> Vec<f64> {
        let n_latent = self.layout.n_latent();
        (0..n_latent)
            .map(|j| {
                let chains: Vec<Vec<f64>> = (0..self.chains)
                    .map(|c| {
                        self.log_r[c * self.draws_per_chain..(c + 1) * self.draws_per_chain]
                            .iter()
                            .map(|row| row[j])
                            .collect()
                    })
                    .collect();
                gelman_rubin(&chains)
            })
            .collect()
    }
}

/// Runs `config.chains` chains one after another and pools their draws.
pub fn run_mcmc(problem: &Problem, config: &McmcConfig, seed: u64) -> Result<PosteriorSamples> {
    config.validate()?;
    let outputs = (0..config.chains)
        .map(|c| run_chain(problem, config, seed, c))
        .collect::<Result<Vec<_>>>()?;
    PosteriorSamples::from_chains(problem.layout, seed, outputs)
}

/// Classical potential scale reduction factor from equal-length chains.
pub fn gelman_rubin(chains: &[Vec<f64>]) -> f64 {
    let m = chains.len();
    let n = chains.first().map_or(0, |c| c.len());
    if m < 2 || n < 2 {
        return f64::NAN;
    }
    let means: Vec<f64> = chains.iter().map(|c| c.iter().sum::<f64>() / n as f64).collect();
    let grand = means.iter().sum::<f64>() / m as f64;
    let between = n as f64 / (m as f64 - 1.0) * means.iter().map(|x| (x - grand) * (x - grand)).sum::<f64>();
    let within = chains
        .iter()
        .zip(&means)
        .map(|(c, mu)| c.iter().map(|x| (x - mu) * (x - mu)).sum::<f64>() / (n as f64 - 1.0))
        .sum::<f64>()
        / m as f64;
    if within <= 0.0 {
        return if between <= 0.0 { 1.0 } else { f64::INFINITY };
    }
    let var = (n as f64 - 1.0) / n as f64 * within + between / n as f64;
    (var / within).sqrt()
}

/// Sample quantiles by linear interpolation between order statistics.
pub fn quantiles(values: &mut [f64], probs: &[f64]) -> Result<Vec<f64>> {
    check_probs(probs)?;
    if values.is_empty() {
        return Err(Error::param("samples", "no draws to summarize"));
    }
    values.sort_by(|a, b| a.total_cmp(b));
    let n = values.len();
    Ok(probs
        .iter()
        .map(|&p| {
            let h = (n - 1) as f64 * p;
            let lo = h.floor() as usize;
            let hi = (lo + 1).min(n - 1);
            values[lo] + (h - lo as f64) * (values[hi] - values[lo])
        })
        .collect())
}

pub fn check_probs(probs: &[f64]) -> Result<()> {
    if probs.is_empty() || probs.iter().any(|p| !(*p > 0.0 && *p < 1.0)) {
        return Err(Error::param("quantiles", "probabilities must lie in (0, 1)"));
    }
    Ok(())
}

/// Per-day quantiles of `R = exp(L)` and `I` on the latent days.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QuantileTable {
    pub probs: Vec<f64>,
    /// First latent day, `1 - K_m`.
    pub first_day: i64,
    /// One row per latent day.
    pub r: Vec<Vec<f64>>,
    pub infections: Vec<Vec<f64>>,
    pub r_mean: Vec<f64>,
    pub infections_mean: Vec<f64>,
}

pub fn posterior_quantiles(samples: &PosteriorSamples, probs: &[f64]) -> Result<QuantileTable> {
    check_probs(probs)?;
    if samples.n_draws() == 0 {
        return Err(Error::param("samples", "no draws to summarize"));
    }
    let layout = &samples.layout;
    let k_w = layout.k_w;
    let n = samples.n_draws() as f64;
    let mut r = Vec::with_capacity(layout.n_latent());
    let mut inf = Vec::with_capacity(layout.n_latent());
    let mut r_mean = Vec::with_capacity(layout.n_latent());
    let mut i_mean = Vec::with_capacity(layout.n_latent());
    for j in 0..layout.n_latent() {
        let mut rv: Vec<f64> = samples.log_r.iter().map(|row| row[j].exp()).collect();
        let mut iv: Vec<f64> = samples.infections.iter().map(|row| row[j + k_w] as f64).collect();
        r_mean.push(rv.iter().sum::<f64>() / n);
        i_mean.push(iv.iter().sum::<f64>() / n);
        r.push(quantiles(&mut rv, probs)?);
        inf.push(quantiles(&mut iv, probs)?);
    }
    Ok(QuantileTable {
        probs: probs.to_vec(),
        first_day: layout.first_latent_day(),
        r,
        infections: inf,
        r_mean,
        infections_mean: i_mean,
    })
}

/// Predictive quantiles for the days after the window.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Prediction {
    pub probs: Vec<f64>,
    /// `R` and `I` on days `T..T+h-1`.
    pub r: Vec<Vec<f64>>,
    pub infections: Vec<Vec<f64>>,
    /// Detections on days `T+1..T+h`.
    pub detections: Vec<Vec<f64>>,
    pub detections_mean: Vec<f64>,
    pub first_day: i64,
}

/// Iterates the Markov transition `horizon` times from every posterior `x_T`.
pub fn posterior_predict(
    states: &[EpidemicState],
    horizon: usize,
    tau: f64,
    profile: &InfectivityProfile,
    delay: &dyn DelayModel,
    probs: &[f64],
    seed: u64,
) -> Result<Prediction> {
    if horizon < 1 {
        return Err(Error::param("horizon", "must be at least 1"));
    }
    check_probs(probs)?;
    if states.is_empty() {
        return Err(Error::param("samples", "no posterior states to predict from"));
    }
    let mut r = vec![Vec::with_capacity(states.len()); horizon];
    let mut inf = vec![Vec::with_capacity(states.len()); horizon];
    let mut det = vec![Vec::with_capacity(states.len()); horizon];
    for (d, x) in states.iter().enumerate() {
        let mut rng = stream_rng(seed, streams::PREDICTION + d as u64);
        let mut state = x.clone();
        for h in 0..horizon {
            state = predictive_step(&state, tau, profile, delay, &mut rng)?;
            r[h].push(state.log_r.exp());
            inf[h].push(*state.infections.last().expect("K_w >= 1") as f64);
            det[h].push(state.detections() as f64);
        }
    }
    let n = states.len() as f64;
    let detections_mean = det.iter().map(|v| v.iter().sum::<f64>() / n).collect();
    let summarize =
        |rows: &mut Vec<Vec<f64>>| -> Result<Vec<Vec<f64>>> { rows.iter_mut().map(|v| quantiles(v, probs)).collect() };
    Ok(Prediction {
        probs: probs.to_vec(),
        r: summarize(&mut r)?,
        infections: summarize(&mut inf)?,
        detections: summarize(&mut det)?,
        detections_mean,
        first_day: states[0].day,
    })
}

/// Draws `L` from its prior: `N(0, σ²)` start and a Gaussian random walk.
pub fn sample_prior_log_r<R: Rng + ?Sized>(n: usize, sigma: f64, tau: f64, rng: &mut R) -> Vec<f64> {
    let mut out = Vec::with_capacity(n);
    let mut l = sigma * standard_normal(rng);
    for _ in 0..n {
        out.push(l);
        l += tau * standard_normal(rng);
    }
    out
}
