//! Day indexing for an observation window `1..=T`.
//!
//! Days are signed integers with day 1 the first observed day. Infections are
//! tracked from `1 - K_m - K_w` (the prior-only initial days) through `T - 1`;
//! the latent block starts at `1 - K_m`, the earliest day whose infections can
//! be detected inside the window.

use alloc::vec;
use alloc::vec::Vec;

use crate::distributions::{DelayModel, InfectivityProfile};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Layout {
    /// Number of observed days `T`.
    pub t: usize,
    pub k_w: usize,
    pub k_m: usize,
}

impl Layout {
    pub fn new(t: usize, k_w: usize, k_m: usize) -> Result<Self> {
        if t == 0 {
            return Err(Error::param("T", "observation window is empty"));
        }
        if k_w == 0 || k_m == 0 {
            return Err(Error::param("horizon", "K_w and K_m must be positive"));
        }
        Ok(Layout { t, k_w, k_m })
    }

    pub fn for_models(t: usize, profile: &InfectivityProfile, delay: &dyn DelayModel) -> Result<Self> {
        Self::new(t, profile.horizon(), delay.max_lag())
    }

    pub fn first_init_day(&self) -> i64 {
        1 - self.k_m as i64 - self.k_w as i64
    }

    pub fn first_latent_day(&self) -> i64 {
        1 - self.k_m as i64
    }

    pub fn last_latent_day(&self) -> i64 {
        self.t as i64 - 1
    }

    /// `T + K_m - 1` latent days.
    pub fn n_latent(&self) -> usize {
        self.t + self.k_m - 1
    }

    /// Initial plus latent days.
    pub fn n_total(&self) -> usize {
        self.k_w + self.n_latent()
    }

    /// Position of `day` in a full (initial plus latent) vector.
    pub fn total_index(&self, day: i64) -> usize {
        (day - self.first_init_day()) as usize
    }

    /// Position of `day` in a latent-only vector.
    pub fn latent_index(&self, day: i64) -> usize {
        (day - self.first_latent_day()) as usize
    }

    pub fn latent_day(&self, j: usize) -> i64 {
        self.first_latent_day() + j as i64
    }

    pub fn total_day(&self, i: usize) -> i64 {
        self.first_init_day() + i as i64
    }
}

/// Delay probabilities materialized for the latent days of one window.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowDelay {
    layout: Layout,
    /// Row `j` holds `m_{s,s+k}` for `k = 1..=K_m`, `s` the `j`-th latent day.
    probs: Vec<f64>,
    nondetect: Vec<f64>,
    observed: Vec<f64>,
}

impl WindowDelay {
    pub fn new(layout: Layout, delay: &dyn DelayModel) -> Result<Self> {
        if delay.max_lag() != layout.k_m {
            return Err(Error::Dimension {
                what: "delay horizon",
                expected: layout.k_m,
                found: delay.max_lag(),
            });
        }
        let k_m = layout.k_m;
        let n = layout.n_latent();
        let mut probs = vec![0.0; n * k_m];
        let mut nondetect = vec![0.0; n];
        let mut observed = vec![0.0; n];
        for j in 0..n {
            let s = layout.latent_day(j);
            for k in 1..=k_m {
                let p = delay.prob(s, k);
                probs[j * k_m + k - 1] = p;
                let t = s + k as i64;
                if (1..=layout.t as i64).contains(&t) {
                    observed[j] += p;
                }
            }
            nondetect[j] = delay.nondetect(s);
        }
        Ok(WindowDelay {
            layout,
            probs,
            nondetect,
            observed,
        })
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    /// `m_{s,s+lag}` for latent index `j`.
    #[inline]
    pub fn prob(&self, j: usize, lag: usize) -> f64 {
        self.probs[j * self.layout.k_m + lag - 1]
    }

    /// Lags `1..=K_m` of latent index `j`.
    pub fn row(&self, j: usize) -> &[f64] {
        let k_m = self.layout.k_m;
        &self.probs[j * k_m..(j + 1) * k_m]
    }

    pub fn nondetect(&self, j: usize) -> f64 {
        self.nondetect[j]
    }

    /// `b_s`, the probability of detection inside the window.
    pub fn observed_mass(&self, j: usize) -> f64 {
        self.observed[j]
    }

    pub fn observed_masses(&self) -> &[f64] {
        &self.observed
    }

    /// `m_{s,t}` for latent index `j` and observed day `t`.
    #[inline]
    pub fn m(&self, j: usize, t: i64) -> f64 {
        let lag = t - self.layout.latent_day(j);
        if lag < 1 || lag > self.layout.k_m as i64 {
            0.0
        } else {
            self.prob(j, lag as usize)
        }
    }

    /// Latent indices contributing to observed day `t`, as a half-open range.
    #[inline]
    pub fn sources(&self, t: i64) -> core::ops::Range<usize> {
        // s = t - K_m ..= t - 1, i.e. j = t - 1 ..= t + K_m - 2.
        let lo = (t - 1).max(0) as usize;
        let hi = ((t + self.layout.k_m as i64 - 1) as usize).min(self.layout.n_latent());
        lo..hi
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distributions::DelayKernel;

    #[test]
    fn day_indices_round_trip() {
        let l = Layout::new(10, 3, 4).unwrap();
        assert_eq!(l.first_init_day(), -6);
        assert_eq!(l.first_latent_day(), -3);
        assert_eq!(l.n_latent(), 13);
        assert_eq!(l.n_total(), 16);
        for i in 0..l.n_total() {
            assert_eq!(l.total_index(l.total_day(i)), i);
        }
        assert_eq!(l.latent_index(9), 12);
    }

    #[test]
    fn sources_cover_exactly_the_contributing_days() {
        let k = DelayKernel::new(alloc::vec![0.25, 0.25, 0.25, 0.2]).unwrap();
        let l = Layout::new(6, 2, 4).unwrap();
        let wd = WindowDelay::new(l, &k).unwrap();
        for t in 1..=6 {
            let r = wd.sources(t);
            for j in 0..l.n_latent() {
                assert_eq!(r.contains(&j), wd.m(j, t) > 0.0, "t={t} j={j}");
            }
        }
        // b_s truncates lags that land after T.
        assert!((wd.observed_mass(l.latent_index(5)) - 0.25).abs() < 1e-15);
        assert!((wd.observed_mass(0) - 0.2).abs() < 1e-15);
    }
}
