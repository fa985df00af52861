//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits non-zero when any criterion fails.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;
use statrs::distribution::{Discrete, Poisson as SPoisson};
use statrs::function::gamma::ln_gamma;

use renewal_mcmc_core::deconvolution::{
    em_deconvolve, em_step, expected_detections, DeconvolutionConfig, Start, Stopping, DEFAULT_SHIFT,
};
use renewal_mcmc_core::distributions::{DelayKernel, InfectivityProfile};
use renewal_mcmc_core::evaluation::{
    ks_uniform, run_replicate, sbc_replicate, ExperimentConfig, Method, SbcSetup, BASELINE_LABEL,
};
use renewal_mcmc_core::mcmc::{
    log_accept_ia, log_accept_ia_lr, run_mcmc, ExpLink, GaussianProposal, Hyperparams, IaView, McmcConfig, Problem,
};
use renewal_mcmc_core::model::{growth_rate, simulate_infections};
use renewal_mcmc_core::preprocess::{decompose, smooth_detections, SeasonalMode, SmoothingConfig};
use renewal_mcmc_core::rng::{poisson, stream_rng, StreamRng};
use renewal_mcmc_core::window::{Layout, WindowDelay};

type Check = Result<String, String>;

const BIN: &str = env!("CARGO_BIN_EXE_renewal-mcmc");

fn repo() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn ensure(ok: bool, detail: String) -> Check {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

// ---------------------------------------------------------------- 1

const PROFILE_TABLE: [f64; 12] = [31., 114., 179., 190., 163., 122., 83., 53., 32., 18., 10., 5.];
const DELAY_TABLE: [f64; 28] = [
    1., 7., 20., 38., 57., 73., 83., 88., 89., 85., 78., 69., 60., 51., 43., 35., 28., 23., 18., 14., 11., 8., 6., 5.,
    4., 3., 2., 1.,
];

fn distribution_tables() -> Check {
    let start = Instant::now();
    let out = Command::new(BIN)
        .args(["-q", "distributions"])
        .output()
        .map_err(|e| e.to_string())?;
    let elapsed = start.elapsed().as_secs_f64();
    if !out.status.success() {
        return Err(format!("exit {:?}", out.status.code()));
    }
    let text = String::from_utf8(out.stdout).map_err(|e| e.to_string())?;
    let mut got: BTreeMap<(String, usize), f64> = BTreeMap::new();
    for line in text.lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        got.insert((f[0].to_string(), f[1].parse().unwrap()), f[2].parse().unwrap());
    }
    let mut bad = Vec::new();
    let mut n = 0;
    for (table, values) in [("profile", &PROFILE_TABLE[..]), ("delay", &DELAY_TABLE[..])] {
        for (i, v) in values.iter().enumerate() {
            n += 1;
            let k = i + 1;
            match got.get(&(table.to_string(), k)) {
                Some(p) if (p - v / 1000.0).abs() <= 0.0005 => {}
                Some(p) => bad.push(format!("{table} k={k}: {p:.7} vs {:.3}", v / 1000.0)),
                None => bad.push(format!("{table} k={k}: missing")),
            }
        }
    }
    let rows = got.len();
    ensure(
        bad.is_empty() && elapsed < 1.0 && rows == n,
        format!(
            "{}/{n} entries within 0.0005, {rows} rows, {elapsed:.3}s{}",
            n - bad.len(),
            if bad.is_empty() {
                String::new()
            } else {
                format!("; off: {}", bad.join(", "))
            }
        ),
    )
}

// ---------------------------------------------------------------- 2

fn companion_root(r: f64, w: &[f64]) -> f64 {
    let k = w.len();
    let mut m = DMatrix::<f64>::zeros(k, k);
    for (j, wj) in w.iter().enumerate() {
        m[(0, j)] = r * wj;
    }
    for i in 1..k {
        m[(i, i - 1)] = 1.0;
    }
    m.complex_eigenvalues()
        .iter()
        .filter(|z| z.im.abs() < 1e-9 && z.re > 0.0)
        .map(|z| z.re)
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Least-squares slope of `y` against its index.
fn slope(y: &[f64]) -> f64 {
    let n = y.len() as f64;
    let xm = (n - 1.0) / 2.0;
    let ym = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (i, v) in y.iter().enumerate() {
        sxy += (i as f64 - xm) * (v - ym);
        sxx += (i as f64 - xm) * (i as f64 - xm);
    }
    sxy / sxx
}

fn growth() -> Check {
    let p = InfectivityProfile::reference();
    let mut notes = Vec::new();
    let mut ok = true;
    for r in [0.8, 1.0, 1.3, 2.0] {
        let rho = growth_rate(r, &p).map_err(|e| e.to_string())?;
        let oracle = companion_root(r, p.weights());
        let err = (rho - oracle).abs();
        ok &= err < 1e-9;
        notes.push(format!("R={r}: |rho-eig|={err:.1e}"));
    }
    let unit = (growth_rate(1.0, &p).map_err(|e| e.to_string())? - 1.0).abs();
    ok &= unit < 1e-12;
    notes.push(format!("|rho(1)-1|={unit:.1e}"));

    let horizon = 60;
    let paths = 10_000u64;
    let k_w = p.horizon();
    for r in [0.8, 1.3, 2.0] {
        let rho = growth_rate(r, &p).map_err(|e| e.to_string())?;
        let mut mean = vec![0.0; horizon];
        for rep in 0..paths {
            let mut rng = stream_rng(2024, rep);
            let x = simulate_infections(&vec![r; horizon], &vec![100; k_w], &p, 1e12, &mut rng)
                .map_err(|e| e.to_string())?;
            for (m, v) in mean.iter_mut().zip(&x[k_w..]) {
                *m += *v as f64 / paths as f64;
            }
        }
        let logs: Vec<f64> = mean[30..].iter().map(|m| m.ln()).collect();
        let rel = slope(&logs) / rho.ln() - 1.0;
        ok &= rel.abs() < 0.02;
        notes.push(format!("R={r}: slope/log(rho)-1={rel:+.4}"));
    }
    ensure(ok, notes.join(", "))
}

// ---------------------------------------------------------------- 3

struct Tiny {
    problem: Problem,
    weights: Vec<f64>,
    kernel: Vec<f64>,
}

fn tiny_instance(rng: &mut StreamRng) -> Tiny {
    let t = rng.random_range(2..=8);
    let k_w = rng.random_range(1..=3);
    let k_m = rng.random_range(1..=3);
    let mut w: Vec<f64> = (0..k_w).map(|_| rng.random_range(0.1..1.0)).collect();
    let sw: f64 = w.iter().sum();
    w.iter_mut().for_each(|x| *x /= sw);
    let mut m: Vec<f64> = (0..k_m).map(|_| rng.random_range(0.1..1.0)).collect();
    let sm: f64 = m.iter().sum::<f64>() / rng.random_range(0.6..1.0);
    m.iter_mut().for_each(|x| *x /= sm);
    let d: Vec<f64> = (0..t).map(|_| rng.random_range(0..=5) as f64).collect();
    let lambda0 = rng.random_range(0.5..3.0);
    let profile = InfectivityProfile::new(w.clone()).unwrap();
    let delay = DelayKernel::new(m.clone()).unwrap();
    let problem = Problem::new(
        &d,
        &profile,
        &delay,
        Hyperparams::new(1.5, 0.3, vec![lambda0; k_w]).unwrap(),
    )
    .unwrap();
    Tiny {
        problem,
        weights: w,
        kernel: m,
    }
}

/// Full configuration: all infections plus the in-window allocations
/// `alloc[j][k-1]` of latent day index `j` at lag `k`.
struct Config {
    infections: Vec<u64>,
    alloc: Vec<Vec<u64>>,
}

fn random_config(tiny: &Tiny, rng: &mut StreamRng) -> Config {
    let l = tiny.problem.layout;
    let k_m = tiny.kernel.len();
    let n = l.n_latent();
    let mut alloc = vec![vec![0u64; k_m]; n];
    for t in 1..=l.t as i64 {
        let sources: Vec<usize> = (0..n)
            .filter(|&j| (1..=k_m as i64).contains(&(t - l.latent_day(j))))
            .collect();
        for _ in 0..tiny.problem.detections[(t - 1) as usize] {
            let j = sources[rng.random_range(0..sources.len())];
            alloc[j][(t - l.latent_day(j)) as usize - 1] += 1;
        }
    }
    let infections = (0..l.n_total())
        .map(|i| {
            let b: u64 = if i >= l.k_w { alloc[i - l.k_w].iter().sum() } else { 0 };
            b + rng.random_range(1..4)
        })
        .collect();
    Config { infections, alloc }
}

fn ln_pois(k: u64, mean: f64) -> f64 {
    if mean == 0.0 {
        return if k == 0 { 0.0 } else { f64::NEG_INFINITY };
    }
    SPoisson::new(mean).unwrap().ln_pmf(k)
}

fn ln_fact(n: u64) -> f64 {
    ln_gamma(n as f64 + 1.0)
}

fn kappa(tiny: &Tiny, infections: &[u64]) -> Vec<f64> {
    let k_w = tiny.weights.len();
    (k_w..infections.len())
        .map(|i| (1..=k_w).map(|k| tiny.weights[k - 1] * infections[i - k] as f64).sum())
        .collect()
}

/// `π_t = Σ_s ψ_s m_{t-s}` over the latent days.
fn convolve(tiny: &Tiny, psi: &[f64]) -> Vec<f64> {
    let l = tiny.problem.layout;
    (1..=l.t as i64)
        .map(|t| {
            psi.iter()
                .enumerate()
                .map(|(j, x)| {
                    let lag = t - l.latent_day(j);
                    if (1..=tiny.kernel.len() as i64).contains(&lag) {
                        x * tiny.kernel[lag as usize - 1]
                    } else {
                        0.0
                    }
                })
                .sum()
        })
        .collect()
}

/// `log p(x) - log q_ψ(x)` from every factor of the joint and proposal densities.
fn log_p_over_q(tiny: &Tiny, log_r: &[f64], cfg: &Config, psi: &[f64]) -> f64 {
    let pr = &tiny.problem;
    let l = pr.layout;
    let k_w = l.k_w;
    let kap = kappa(tiny, &cfg.infections);
    let pi = convolve(tiny, &psi[k_w..]);
    let mut log_p = 0.0;
    let mut log_q = 0.0;
    for i in 0..k_w {
        let lp = ln_pois(cfg.infections[i], pr.hyper.lambda0[i]);
        log_p += lp;
        log_q += lp;
    }
    for j in 0..l.n_latent() {
        let i = cfg.infections[j + k_w];
        let lam = log_r[j].exp() * kap[j];
        log_p += ln_pois(i, lam);
        let mut in_window = 0.0;
        let mut placed = 0;
        log_p += ln_fact(i);
        for k in 1..=tiny.kernel.len() {
            let t = l.latent_day(j) + k as i64;
            if (1..=l.t as i64).contains(&t) {
                let a = cfg.alloc[j][k - 1];
                placed += a;
                in_window += tiny.kernel[k - 1];
                log_p += a as f64 * tiny.kernel[k - 1].ln() - ln_fact(a);
            }
        }
        // Cells after the window and nondetection pooled into one remainder.
        let rest = i - placed;
        let rest_p = 1.0 - in_window;
        log_p += if rest == 0 { 0.0 } else { rest as f64 * rest_p.ln() } - ln_fact(rest);
        log_q += ln_pois(rest, rest_p * lam);
    }
    for t in 1..=l.t as i64 {
        log_q += ln_fact(pr.detections[(t - 1) as usize]);
        for j in 0..l.n_latent() {
            let lag = t - l.latent_day(j);
            if (1..=tiny.kernel.len() as i64).contains(&lag) {
                let a = cfg.alloc[j][lag as usize - 1];
                let nu = psi[j + k_w] * tiny.kernel[lag as usize - 1] / pi[(t - 1) as usize];
                log_q += if a == 0 { 0.0 } else { a as f64 * nu.ln() } - ln_fact(a);
            }
        }
    }
    log_p - log_q
}

fn acceptance_ratio() -> Check {
    let mut rng = stream_rng(303, 0);
    let mut worst_brute: f64 = 0.0;
    let mut worst_lr: f64 = 0.0;
    for _ in 0..1000 {
        let tiny = tiny_instance(&mut rng);
        let l = tiny.problem.layout;
        let log_r: Vec<f64> = (0..l.n_latent()).map(|_| rng.random_range(-0.5..0.5)).collect();
        let x = random_config(&tiny, &mut rng);
        let y = random_config(&tiny, &mut rng);
        let sx: Vec<f64> = (0..l.n_total()).map(|_| rng.random_range(0.2..4.0)).collect();
        let sy: Vec<f64> = (0..l.n_total()).map(|_| rng.random_range(0.2..4.0)).collect();
        let oracle = log_p_over_q(&tiny, &log_r, &y, &sy) - log_p_over_q(&tiny, &log_r, &x, &sx);

        let parts = |c: &Config| {
            let b: Vec<u64> = c.alloc.iter().map(|r| r.iter().sum()).collect();
            let lam: Vec<f64> = kappa(&tiny, &c.infections)
                .iter()
                .zip(&log_r)
                .map(|(k, r)| r.exp() * k)
                .collect();
            (b, lam)
        };
        let (bx, lx) = parts(&x);
        let (by, ly) = parts(&y);
        let (px, py) = (convolve(&tiny, &sx[l.k_w..]), convolve(&tiny, &sy[l.k_w..]));
        let cur = IaView {
            detected: &bx,
            lambda: &lx,
            psi: &sx[l.k_w..],
            pi: &px,
        };
        let cand = IaView {
            detected: &by,
            lambda: &ly,
            psi: &sy[l.k_w..],
            pi: &py,
        };
        let r = log_accept_ia(&tiny.problem, cur, cand).map_err(|e| e.to_string())?;
        let lr = log_accept_ia_lr(&tiny.problem, cur, cand);
        worst_brute = worst_brute.max((r - oracle).abs());
        worst_lr = worst_lr.max((r - lr).abs());
    }
    ensure(
        worst_brute < 1e-8 && worst_lr < 1e-10,
        format!("1000 instances, max |r - brute force| = {worst_brute:.1e}, max |r - lr form| = {worst_lr:.1e}"),
    )
}

// ---------------------------------------------------------------- 4

fn l_proposal() -> Check {
    let n = 30;
    let (sigma, tau) = (1.5, 0.025);
    let mut rng = stream_rng(404, 0);
    let centre: Vec<f64> = (0..n).map(|i| 0.1 + 0.2 * (i as f64 / 6.0).sin()).collect();
    let kap: Vec<f64> = (0..n).map(|_| rng.random_range(20.0..150.0)).collect();
    let infections: Vec<u64> = kap
        .iter()
        .zip(&centre)
        .map(|(k, c)| poisson(&mut rng, k * c.exp()))
        .collect();
    let prop = GaussianProposal::new(&ExpLink, &centre, &infections, &kap, sigma, tau).map_err(|e| e.to_string())?;

    // Dense precision and linear term of the second-order expansion.
    let rw = 1.0 / (tau * tau);
    let mut q = DMatrix::<f64>::zeros(n, n);
    let mut b = DVector::<f64>::zeros(n);
    for i in 0..n {
        let e = centre[i].exp() * kap[i];
        q[(i, i)] += e;
        b[i] = infections[i] as f64 - e + centre[i] * e;
        if i + 1 < n {
            q[(i, i)] += rw;
            q[(i + 1, i + 1)] += rw;
            q[(i, i + 1)] -= rw;
            q[(i + 1, i)] -= rw;
        }
    }
    q[(0, 0)] += 1.0 / (sigma * sigma);
    let chol = q.clone().cholesky().ok_or("dense precision not positive definite")?;
    let mu = chol.solve(&b);
    let cov = chol.inverse();
    let log_det = 2.0 * chol.l().diagonal().iter().map(|x| x.ln()).sum::<f64>();
    let dense_log_q = |x: &[f64]| {
        let d = DVector::from_column_slice(x) - &mu;
        -0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln() + 0.5 * log_det - 0.5 * (d.transpose() * &q * &d)[(0, 0)]
    };

    let draws = 100_000;
    let mut sum = vec![0.0; n];
    let mut sq = vec![0.0; n];
    let mut worst_density: f64 = 0.0;
    for k in 0..draws {
        let (x, lq) = prop.sample(&mut rng);
        for i in 0..n {
            let d = x[i] - mu[i];
            sum[i] += d;
            sq[i] += d * d;
        }
        if k < 2000 {
            worst_density = worst_density.max((lq - dense_log_q(&x)).abs());
            worst_density = worst_density.max((prop.log_density(&x) - dense_log_q(&x)).abs());
        }
    }
    let mut worst_z: f64 = 0.0;
    let mut worst_var: f64 = 0.0;
    for i in 0..n {
        let m = sum[i] / draws as f64;
        let var = sq[i] / draws as f64 - m * m;
        let se = (cov[(i, i)] / draws as f64).sqrt();
        worst_z = worst_z.max(m.abs() / se);
        worst_var = worst_var.max((var / cov[(i, i)] - 1.0).abs());
    }
    ensure(
        worst_z < 4.0 && worst_var < 0.05 && worst_density < 1e-9,
        format!(
            "1e5 draws, max |mean - Q^-1 b| = {worst_z:.2} SE, max relative variance error {worst_var:.4}, max log-density error {worst_density:.1e}"
        ),
    )
}

// ---------------------------------------------------------------- 5

fn pseudo_ll(i: &[f64], d: &[f64], probs: &[f64]) -> f64 {
    let k_m = probs.len() as i64;
    let mut e = vec![0.0; d.len()];
    for (j, x) in i.iter().enumerate() {
        let s = j as i64 + 1 - k_m;
        for t in 1..=d.len() as i64 {
            let lag = t - s;
            if (1..=k_m).contains(&lag) {
                e[t as usize - 1] += x * probs[lag as usize - 1];
            }
        }
    }
    d.iter()
        .zip(&e)
        .map(|(dt, et)| if *dt > 0.0 { dt * et.ln() - et } else { -et })
        .sum()
}

fn em_properties() -> Check {
    let mut rng = stream_rng(505, 0);
    let mut worst_drop: f64 = 0.0;
    for _ in 0..100 {
        let raw: Vec<f64> = (0..6).map(|_| rng.random::<f64>() + 0.05).collect();
        let total = raw.iter().sum::<f64>() / 0.9;
        let kernel = DelayKernel::new(raw.iter().map(|x| x / total).collect()).unwrap();
        let wd = WindowDelay::new(Layout::new(30, 1, 6).unwrap(), &kernel).unwrap();
        let d: Vec<f64> = (0..30).map(|_| (rng.random::<f64>() * 40.0).floor()).collect();
        let mut i: Vec<f64> = (0..wd.layout().n_latent())
            .map(|_| rng.random::<f64>() * 30.0 + 0.1)
            .collect();
        let mut prev = pseudo_ll(&i, &d, kernel.probs());
        for _ in 0..50 {
            i = em_step(&i, &d, &wd).map_err(|e| e.to_string())?;
            let ll = pseudo_ll(&i, &d, kernel.probs());
            worst_drop = worst_drop.max(prev - ll);
            prev = ll;
        }
    }

    let unit = DelayKernel::unit();
    let wd = WindowDelay::new(Layout::new(20, 1, 1).unwrap(), &unit).unwrap();
    let truth: Vec<f64> = (0..20)
        .map(|j| (30.0 + 10.0 * (j as f64 / 3.0).cos()).round())
        .collect();
    let d = expected_detections(&truth, &wd).map_err(|e| e.to_string())?;
    let one = DeconvolutionConfig {
        max_iters: 1,
        stopping: Stopping::FixedIters(1),
        start: Start::ShiftedConstant,
        shift: DEFAULT_SHIFT,
    };
    let unit_exact = em_deconvolve(&d, &wd, &one).map_err(|e| e.to_string())?.estimate == truth;

    let kernel = DelayKernel::reference();
    let t = 90;
    let wd = WindowDelay::new(Layout::new(t, 1, kernel.horizon()).unwrap(), &kernel).unwrap();
    let n = wd.layout().n_latent();
    let truth: Vec<f64> = (0..n).map(|j| 200.0 * (0.02 * j as f64).exp()).collect();
    let d = expected_detections(&truth, &wd).map_err(|e| e.to_string())?;
    let run = |start| {
        em_deconvolve(
            &d,
            &wd,
            &DeconvolutionConfig {
                max_iters: 100_000,
                stopping: Stopping::ChiSquaredBelow(t as f64),
                start,
                shift: DEFAULT_SHIFT,
            },
        )
    };
    let a = run(Start::ShiftedConstant).map_err(|e| e.to_string())?;
    let b = run(Start::ShiftedLinear).map_err(|e| e.to_string())?;
    let rel = |j: usize| (a.estimate[j] - b.estimate[j]).abs() / truth[j];
    let k_m = kernel.horizon();
    let edge = (0..n)
        .filter(|j| *j < k_m || *j >= n - k_m)
        .map(rel)
        .fold(0.0, f64::max);
    let interior = (k_m..n - k_m).map(rel).fold(0.0, f64::max);
    let below = a.converged && b.converged && a.final_chi_squared() < t as f64 && b.final_chi_squared() < t as f64;
    ensure(
        worst_drop <= 1e-10 && unit_exact && below && edge > 10.0 * interior && edge > 0.01,
        format!(
            "largest pseudo-likelihood drop {worst_drop:.1e}, unit delay exact: {unit_exact}, two starts below chi2 {t}: {below} (chi2 {:.1} / {:.1}), start difference edge {edge:.3} vs interior {interior:.4}",
            a.final_chi_squared(),
            b.final_chi_squared()
        ),
    )
}

// ---------------------------------------------------------------- 6

fn calibration() -> Check {
    let setup = SbcSetup {
        t: 20,
        profile: InfectivityProfile::new(vec![0.3, 0.5, 0.2]).unwrap(),
        delay: DelayKernel::new(vec![0.3, 0.4, 0.2]).unwrap(),
        sigma: 0.3,
        tau: 0.1,
        lambda0: 10.0,
        mcmc: McmcConfig {
            iterations: 11_000,
            burn_in: 1_000,
            thin: 100,
            chains: 1,
            ..McmcConfig::default()
        },
        max_detections: 200,
    };
    let seed = 606;
    let mut ranks = Vec::new();
    let mut index = 0u64;
    let mut skipped = 0;
    while ranks.len() < 200 {
        let batch: Vec<_> = (index..index + 8)
            .into_par_iter()
            .map(|i| sbc_replicate(&setup, seed, i))
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| e.to_string())?;
        index += 8;
        for r in batch {
            match r {
                Some(r) if ranks.len() < 200 => ranks.push(r),
                Some(_) => {}
                None => skipped += 1,
            }
        }
    }
    // One uniformly chosen day per replication keeps the pooled values independent.
    let mut rng = stream_rng(seed, 0);
    let mut one_day = Vec::new();
    let mut all_days = Vec::new();
    for r in &ranks {
        let u = r.jittered(&mut rng);
        one_day.push(u[rng.random_range(0..u.len())]);
        all_days.extend(u);
    }
    let ks = ks_uniform(&one_day).map_err(|e| e.to_string())?;
    let pooled = ks_uniform(&all_days).map_err(|e| e.to_string())?;
    ensure(
        ks.p_value > 0.01,
        format!(
            "200 replications ({skipped} prior draws over the detection cap skipped), {} draws each, KS p = {:.3} (all days pooled: p = {:.3})",
            ranks[0].draws, ks.p_value, pooled.p_value
        ),
    )
}

// ---------------------------------------------------------------- 7

fn experiment() -> Check {
    let config = ExperimentConfig::default();
    let setup = config.setup().map_err(|e| e.to_string())?;
    let reps = (0..config.n_replicates)
        .into_par_iter()
        .map(|i| run_replicate(&config, &setup, i))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| e.to_string())?;
    let table =
        renewal_mcmc_core::evaluation::aggregate(&config, &setup, &reps, Vec::new()).map_err(|e| e.to_string())?;
    let get = |m: &str, v: &str| {
        table
            .summary_for(m, v)
            .cloned()
            .ok_or(format!("no summary for {m}/{v}"))
    };
    let (mr, br) = (get("mcmc", "R")?, get(BASELINE_LABEL, "R")?);
    let (mi, bi) = (get("mcmc", "I")?, get(BASELINE_LABEL, "I")?);
    ensure(
        mr.rmse < br.rmse
            && mr.interval_score < br.interval_score
            && mi.rmse < bi.rmse
            && (0.85..=1.0).contains(&mr.coverage),
        format!(
            "{} replicates, {} days: RMSE(R) {:.4} vs {:.4}, IS(R) {:.4} vs {:.4}, RMSE(I) {:.1} vs {:.1}, mcmc coverage(R) {:.3}",
            table.n_effective,
            table.days.len(),
            mr.rmse,
            br.rmse,
            mr.interval_score,
            br.interval_score,
            mi.rmse,
            bi.rmse,
            mr.coverage
        ),
    )
}

// ---------------------------------------------------------------- 8

fn sequential_consistency() -> Check {
    let config = ExperimentConfig {
        n_replicates: 1,
        methods: vec![
            Method::Mcmc,
            Method::Sequential {
                window: 42,
                offsets: vec![21],
            },
        ],
        seed: 808,
        ..ExperimentConfig::default()
    };
    let setup = config.setup().map_err(|e| e.to_string())?;

    // One window of the default length, timed on its own.
    let start = Instant::now();
    let mut rng = stream_rng(808, 1);
    let k_w = setup.layout.k_w;
    let init: Vec<u64> = (0..k_w).map(|_| poisson(&mut rng, config.lambda0)).collect();
    let path = renewal_mcmc_core::model::simulate_path(
        42,
        &setup.truth_r[..42 + setup.layout.k_m - 1],
        &init,
        &setup.profile,
        &setup.delay,
        1e9,
        &mut rng,
    )
    .map_err(|e| e.to_string())?;
    let d: Vec<f64> = path.detections.iter().map(|&x| x as f64).collect();
    let hyper = Hyperparams::new(config.sigma, config.tau, vec![config.lambda0; k_w]).map_err(|e| e.to_string())?;
    let problem = Problem::new(&d, &setup.profile, &setup.delay, hyper).map_err(|e| e.to_string())?;
    run_mcmc(&problem, &config.mcmc, 1).map_err(|e| e.to_string())?;
    let window_secs = start.elapsed().as_secs_f64();

    let rep = run_replicate(&config, &setup, 0).map_err(|e| e.to_string())?;
    let full = rep
        .estimates
        .iter()
        .find(|e| e.label == "mcmc")
        .ok_or("no mcmc estimate")?;
    let seq = rep
        .estimates
        .iter()
        .find(|e| e.label == "sequential_s21")
        .ok_or("no sequential estimate")?;
    let overlap = |a: &[f64], b: &[f64]| a[0].max(b[0]) <= a[2].min(b[2]);
    let mut notes = Vec::new();
    let mut ok = window_secs <= 300.0;
    for (name, fa, sa) in [("R", &full.r, &seq.r), ("I", &full.infections, &seq.infections)] {
        let days: Vec<bool> = fa
            .iter()
            .zip(sa.iter())
            .filter_map(|(f, s)| Some(overlap(f.as_ref()?, s.as_ref()?)))
            .collect();
        let frac = days.iter().filter(|x| **x).count() as f64 / days.len().max(1) as f64;
        ok &= !days.is_empty() && frac >= 0.95;
        notes.push(format!("{name}: intervals overlap on {frac:.3} of {} days", days.len()));
    }
    notes.push(format!("one 42-day window fit {window_secs:.1}s"));
    ensure(ok, notes.join(", "))
}

// ---------------------------------------------------------------- 9

fn preprocess_properties() -> Check {
    let mut rng = stream_rng(909, 0);
    let mut worst_sum: f64 = 0.0;
    for case in 0..1000 {
        let n = rng.random_range(14..100);
        let level = rng.random_range(1.0..8.0);
        let slope = rng.random_range(-0.05..0.05);
        let counts: Vec<f64> = (0..n)
            .map(|t| poisson(&mut rng, (level + slope * t as f64).exp()) as f64 + 1.0)
            .collect();
        let cfg = SmoothingConfig {
            trend_window: [7, 15, 21][case % 3],
            seasonal: if case % 2 == 0 {
                SeasonalMode::Periodic
            } else {
                SeasonalMode::Window(7)
            },
            robust: case % 4 < 2,
            zero_offset: None,
        };
        let s = smooth_detections(&counts, &cfg).map_err(|e| e.to_string())?;
        let (a, b): (f64, f64) = (s.smoothed.iter().sum(), counts.iter().sum());
        worst_sum = worst_sum.max((a - b).abs() / b);
    }

    let pattern = [0.15, 0.2, 0.1, 0.05, 0.0, -0.3, -0.4];
    let mean = pattern.iter().sum::<f64>() / 7.0;
    let centred = pattern.map(|p| p - mean);
    let mut worst_pattern: f64 = 0.0;
    for mode in [SeasonalMode::Periodic, SeasonalMode::Window(7)] {
        for robust in [false, true] {
            let y: Vec<f64> = (0..63).map(|t| 4.0 + 0.03 * t as f64 + centred[t % 7]).collect();
            let out = decompose(&y, 15, mode, robust).map_err(|e| e.to_string())?;
            for t in 7..56 {
                worst_pattern = worst_pattern.max((out.seasonal[t] - centred[t % 7]).abs());
                worst_pattern = worst_pattern.max((out.trend[t] - (4.0 + 0.03 * t as f64)).abs());
            }
        }
    }

    let mut y: Vec<f64> = (0..63)
        .map(|t| (poisson(&mut rng, (5.5 + 0.8 * (t as f64 / 15.0).sin() + centred[t % 7]).exp()) as f64).ln())
        .collect();
    let clean_robust = decompose(&y, 15, SeasonalMode::Periodic, true).map_err(|e| e.to_string())?;
    let clean_plain = decompose(&y, 15, SeasonalMode::Periodic, false).map_err(|e| e.to_string())?;
    let outlier = -1.5;
    y[30] += outlier;
    let robust = decompose(&y, 15, SeasonalMode::Periodic, true).map_err(|e| e.to_string())?;
    let plain = decompose(&y, 15, SeasonalMode::Periodic, false).map_err(|e| e.to_string())?;
    let moved = |a: &[f64], b: &[f64]| (25..=35).map(|t| (a[t] - b[t]).abs()).fold(0.0, f64::max);
    let moved_robust = moved(&robust.trend, &clean_robust.trend);
    let moved_plain = moved(&plain.trend, &clean_plain.trend);
    let absorbed = robust.remainder[30] < 0.8 * outlier;
    ensure(
        worst_sum <= 1e-9
            && worst_pattern <= 1e-6
            && moved_robust < 0.1 * outlier.abs()
            && moved_robust < moved_plain
            && absorbed,
        format!(
            "sum error {worst_sum:.1e} over 1000 inputs, weekday/trend recovery error {worst_pattern:.1e}, holiday moves robust trend by {moved_robust:.4} (plain {moved_plain:.4}, outlier {}), remainder absorbs it: {absorbed}",
            outlier.abs()
        ),
    )
}

// ---------------------------------------------------------------- 10

fn run_cli(args: &[&str]) -> Result<(), String> {
    let out = Command::new(BIN)
        .arg("-q")
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!("{args:?}: {}", String::from_utf8_lossy(&out.stderr).trim()))
    }
}

fn output_files(root: &Path) -> BTreeMap<String, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<String, Vec<u8>>) {
        for e in std::fs::read_dir(dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                walk(root, &p, out);
            } else if p.file_name().unwrap() != renewal_mcmc::io::MANIFEST {
                let rel = p.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                out.insert(rel, std::fs::read(&p).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(root, root, &mut out);
    out
}

fn determinism() -> Check {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let dir = tmp.path();
    let write = |name: &str, text: &str| {
        let p = dir.join(name);
        std::fs::write(&p, text).unwrap();
        p.to_string_lossy().into_owned()
    };
    let fit_cfg = write(
        "fit.json",
        r#"{"mcmc": {"iterations": 600, "burn_in": 200, "thin": 4}, "write_samples": true}"#,
    );
    let seq_cfg = write(
        "seq.json",
        r#"{"mcmc": {"iterations": 300, "burn_in": 100, "thin": 4}}"#,
    );
    let eval_cfg = write(
        "eval.json",
        r#"{"n_replicates": 2, "t": 30, "mcmc": {"iterations": 300, "burn_in": 100, "thin": 4}, "baseline": {"n_boot": 10}, "methods": ["mcmc", "baseline", {"sequential": {"window": 28, "offsets": [2]}}]}"#,
    );
    let sim_cfg = write("sim.json", r#"{"t": 40}"#);
    let data = repo().join("data/synthetic.csv").to_string_lossy().into_owned();
    let mut commands = Vec::new();
    for run in ["a", "b"] {
        let o = |name: &str| dir.join(run).join(name).to_string_lossy().into_owned();
        let fit_dir = o("fit");
        let list: Vec<(&str, Vec<String>)> = vec![
            (
                "distributions",
                vec!["distributions".into(), "--output-dir".into(), o("distributions")],
            ),
            (
                "preprocess",
                vec![
                    "preprocess".into(),
                    "--input".into(),
                    data.clone(),
                    "--output-dir".into(),
                    o("preprocess"),
                ],
            ),
            (
                "deconvolve",
                vec![
                    "deconvolve".into(),
                    "--input".into(),
                    data.clone(),
                    "--output-dir".into(),
                    o("deconvolve"),
                ],
            ),
            (
                "simulate",
                vec![
                    "simulate".into(),
                    "--config".into(),
                    sim_cfg.clone(),
                    "--seed".into(),
                    "5".into(),
                    "--output-dir".into(),
                    o("simulate"),
                ],
            ),
            (
                "fit",
                vec![
                    "fit".into(),
                    "--input".into(),
                    data.clone(),
                    "--config".into(),
                    fit_cfg.clone(),
                    "--seed".into(),
                    "7".into(),
                    "--output-dir".into(),
                    fit_dir.clone(),
                ],
            ),
            (
                "predict",
                vec![
                    "predict".into(),
                    "--fit-dir".into(),
                    fit_dir.clone(),
                    "--horizon".into(),
                    "5".into(),
                    "--output-dir".into(),
                    o("predict"),
                ],
            ),
            (
                "sequential",
                vec![
                    "sequential".into(),
                    "--input".into(),
                    data.clone(),
                    "--window".into(),
                    "56".into(),
                    "--config".into(),
                    seq_cfg.clone(),
                    "--output-dir".into(),
                    o("sequential"),
                ],
            ),
            (
                "evaluate",
                vec![
                    "evaluate".into(),
                    "--config".into(),
                    eval_cfg.clone(),
                    "--output-dir".into(),
                    o("evaluate"),
                ],
            ),
        ];
        for (name, args) in list {
            let refs: Vec<&str> = args.iter().map(String::as_str).collect();
            run_cli(&refs)?;
            if run == "a" {
                commands.push(name);
            }
        }
    }
    let mut differing = Vec::new();
    let mut files = 0;
    for name in &commands {
        let a = output_files(&dir.join("a").join(name));
        let b = output_files(&dir.join("b").join(name));
        files += a.len();
        if a.is_empty() || a != b {
            differing.push(*name);
        }
    }
    ensure(
        differing.is_empty(),
        format!(
            "{} commands run twice, {files} output files compared{}",
            commands.len(),
            if differing.is_empty() {
                String::new()
            } else {
                format!("; differing: {}", differing.join(", "))
            }
        ),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Check); 10] = [
        ("distribution tables", distribution_tables),
        ("growth rate", growth),
        ("infection-block acceptance ratio", acceptance_ratio),
        ("log-R proposal", l_proposal),
        ("EM deconvolution", em_properties),
        ("simulation-based calibration", calibration),
        ("desk-scale experiment", experiment),
        ("sequential consistency", sequential_consistency),
        ("preprocess properties", preprocess_properties),
        ("CLI determinism", determinism),
    ];
    let only: Option<usize> = std::env::var("ACCEPTANCE_ONLY").ok().and_then(|v| v.parse().ok());
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let n = i + 1;
        if only.is_some_and(|o| o != n) {
            continue;
        }
        let start = Instant::now();
        let result = check();
        let secs = start.elapsed().as_secs_f64();
        match result {
            Ok(detail) => println!("PASS criterion {n} ({name}): {detail} [{secs:.1}s]"),
            Err(detail) => {
                failed += 1;
                println!("FAIL criterion {n} ({name}): {detail} [{secs:.1}s]");
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
