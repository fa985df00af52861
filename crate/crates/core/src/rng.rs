//! Seeded random streams and the discrete samplers used throughout.
//!
//! Every stochastic routine takes an explicit generator. Independent pieces of
//! work (chains, replicates, simulations) get their own ChaCha stream derived
//! from a user seed and a stream id, so results do not depend on scheduling.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, StandardNormal};

#[allow(unused_imports)] // shadowed by inherent methods when std is linked
use num_traits::Float;

use crate::special::ln_gamma;

pub type StreamRng = ChaCha8Rng;

/// Stream-id namespaces, combined with an index in the low 32 bits.
pub mod streams {
    pub const CHAIN: u64 = 1 << 32;
    pub const SIMULATION: u64 = 2 << 32;
    pub const PREDICTION: u64 = 3 << 32;
    pub const BOOTSTRAP: u64 = 4 << 32;
    pub const REPLICATE: u64 = 5 << 32;
    pub const MONTE_CARLO: u64 = 6 << 32;
}

pub fn stream_rng(seed: u64, stream: u64) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// SplitMix64 finalizer; derives child seeds for nested experiments.
pub fn mix_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed.wrapping_add(index.wrapping_add(1).wrapping_mul(0x9e37_79b9_7f4a_7c15));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn uniform<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.random::<f64>()
}

pub fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

/// Poisson draw: sequential inversion below 10, Hörmann's PTRS above.
pub fn poisson<R: Rng + ?Sized>(rng: &mut R, lambda: f64) -> u64 {
    if !(lambda > 0.0) {
        return 0;
    }
    if lambda < 10.0 {
        poisson_inversion(rng, lambda)
    } else {
        poisson_ptrs(rng, lambda)
    }
}

fn poisson_inversion<R: Rng + ?Sized>(rng: &mut R, lambda: f64) -> u64 {
    let u = uniform(rng);
    let mut k = 0u64;
    let mut p = (-lambda).exp();
    let mut cdf = p;
    while u > cdf {
        k += 1;
        p *= lambda / k as f64;
        cdf += p;
        // Floating point residue in the far tail.
        if p < 1e-300 && k as f64 > lambda {
            break;
        }
    }
    k
}

fn poisson_ptrs<R: Rng + ?Sized>(rng: &mut R, lambda: f64) -> u64 {
    let slam = lambda.sqrt();
    let loglam = lambda.ln();
    let b = 0.931 + 2.53 * slam;
    let a = -0.059 + 0.02483 * b;
    let inv_alpha = 1.1239 + 1.1328 / (b - 3.4);
    let vr = 0.9277 - 3.6224 / (b - 2.0);
    loop {
        let u = uniform(rng) - 0.5;
        let v = uniform(rng);
        let us = 0.5 - u.abs();
        let k = ((2.0 * a / us + b) * u + lambda + 0.43).floor();
        if us >= 0.07 && v <= vr {
            return k as u64;
        }
        if k < 0.0 || (us < 0.013 && v > us) {
            continue;
        }
        if v.ln() + inv_alpha.ln() - (a / (us * us) + b).ln() <= -lambda + k * loglam - ln_gamma(k + 1.0) {
            return k as u64;
        }
    }
}

pub fn binomial<R: Rng + ?Sized>(rng: &mut R, n: u64, p: f64) -> u64 {
    if n == 0 || p <= 0.0 {
        return 0;
    }
    if p >= 1.0 {
        return n;
    }
    Binomial::new(n, p)
        .expect("probability checked to lie in (0, 1)")
        .sample(rng)
}

/// Multinomial draw by sequential conditional binomials.
///
/// `probs` need not be normalized; each cell gets its share of the mass that
/// is still unallocated.
pub fn multinomial_into<R: Rng + ?Sized>(rng: &mut R, n: u64, probs: &[f64], out: &mut [u64]) {
    debug_assert_eq!(probs.len(), out.len());
    let mut remaining_mass: f64 = probs.iter().sum();
    let mut remaining = n;
    // The last positive cell absorbs whatever rounding leaves behind.
    let last = probs.iter().rposition(|&p| p > 0.0).unwrap_or(0);
    for (i, (&p, slot)) in probs.iter().zip(out.iter_mut()).enumerate() {
        if remaining == 0 || p <= 0.0 {
            *slot = 0;
            continue;
        }
        if i == last {
            *slot = remaining;
            remaining = 0;
            continue;
        }
        let q = if remaining_mass > 0.0 { p / remaining_mass } else { 0.0 };
        let draw = binomial(rng, remaining, q);
        *slot = draw;
        remaining -= draw;
        remaining_mass -= p;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn moments(draws: &[u64]) -> (f64, f64) {
        let n = draws.len() as f64;
        let mean = draws.iter().map(|&x| x as f64).sum::<f64>() / n;
        let var = draws.iter().map(|&x| (x as f64 - mean).powi(2)).sum::<f64>() / (n - 1.0);
        (mean, var)
    }

    #[test]
    fn poisson_moments_both_regimes() {
        let mut rng = stream_rng(7, 0);
        for &lambda in &[0.3, 4.0, 9.99, 10.0, 57.5, 2.0e4] {
            let draws: alloc::vec::Vec<u64> = (0..40_000).map(|_| poisson(&mut rng, lambda)).collect();
            let (mean, var) = moments(&draws);
            let se = (lambda / 40_000.0).sqrt();
            assert!((mean - lambda).abs() < 5.0 * se, "lambda {lambda}: mean {mean}");
            assert!((var / lambda - 1.0).abs() < 0.05, "lambda {lambda}: var {var}");
        }
    }

    #[test]
    fn multinomial_preserves_size() {
        let mut rng = stream_rng(3, 1);
        let probs = [0.1, 0.0, 0.5, 0.4];
        let mut out = vec![0; 4];
        for n in [0u64, 1, 17, 1000] {
            multinomial_into(&mut rng, n, &probs, &mut out);
            assert_eq!(out.iter().sum::<u64>(), n);
            assert_eq!(out[1], 0);
        }
    }

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let a: u64 = stream_rng(11, 5).random();
        let b: u64 = stream_rng(11, 5).random();
        let c: u64 = stream_rng(11, 6).random();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }
}
