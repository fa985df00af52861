use proptest::prelude::*;
use renewal_mcmc_core::distributions::{
    convolve_gamma_delay, discretize_gamma, weekday_multiplicative_delay, weekday_shift_delay, DelayKernel, DelayModel,
    InfectivityProfile,
};
use statrs::distribution::{ContinuousCDF, Gamma};

fn oracle_discretization(mean: f64, sd: f64, k_max: usize) -> Vec<f64> {
    let shape = (mean / sd).powi(2);
    let rate = mean / (sd * sd);
    let g = Gamma::new(shape, rate).unwrap();
    let mut prev = 0.0;
    let mut out: Vec<f64> = (1..=k_max)
        .map(|k| {
            let next = g.cdf(k as f64 + 0.5);
            let p = next - prev;
            prev = next;
            p
        })
        .collect();
    let total: f64 = out.iter().sum();
    out.iter_mut().for_each(|p| *p /= total);
    out
}

#[test]
fn gamma_discretization_matches_independent_cdf() {
    for &(mean, sd, k) in &[(4.8, 2.3, 12), (5.0, 1.0, 20), (2.0, 3.0, 10), (10.0, 4.0, 30)] {
        let ours = discretize_gamma(mean, sd, k).unwrap();
        let oracle = oracle_discretization(mean, sd, k);
        for (a, b) in ours.iter().zip(&oracle) {
            assert!((a - b).abs() < 1e-9, "mean {mean} sd {sd}: {a} vs {b}");
        }
    }
}

#[test]
fn convolution_of_gammas_matches_numeric_convolution_of_fine_grid() {
    // Oracle: convolve the two densities on a fine grid and integrate the result.
    let (m1, s1, m2, s2, k_max) = (5.0, 2.0, 4.0, 3.0, 28);
    let kernel = convolve_gamma_delay(m1, s1, m2, s2, k_max).unwrap();
    let ga = Gamma::new((m1 / s1).powi(2), m1 / (s1 * s1)).unwrap();
    let gb = Gamma::new((m2 / s2).powi(2), m2 / (s2 * s2)).unwrap();
    let h = 1e-3;
    let cdf_sum = |x: f64| {
        let n = (x / h).round() as usize;
        (0..n)
            .map(|i| {
                let y0 = i as f64 * h;
                let y1 = y0 + h;
                (ga.cdf(y1) - ga.cdf(y0)) * gb.cdf(x - 0.5 * (y0 + y1))
            })
            .sum::<f64>()
    };
    let mut prev = 0.0;
    let mut oracle: Vec<f64> = (1..=k_max)
        .map(|k| {
            let next = cdf_sum(k as f64 + 0.5);
            let p = next - prev;
            prev = next;
            p
        })
        .collect();
    let total: f64 = oracle.iter().sum();
    oracle.iter_mut().for_each(|p| *p /= total);
    for (k, (a, b)) in kernel.probs().iter().zip(&oracle).enumerate() {
        assert!((a - b).abs() < 1e-5, "lag {}: {a} vs {b}", k + 1);
    }
}

#[test]
fn reference_kernels_are_distributions() {
    let w = InfectivityProfile::reference();
    assert!((w.weights().iter().sum::<f64>() - 1.0).abs() < 1e-12);
    let m = DelayKernel::reference();
    assert!((m.detected_mass() + m.nondetect() - 1.0).abs() < 1e-12);
}

proptest! {
    #[test]
    fn discretized_gamma_is_a_distribution(mean in 0.5f64..15.0, sd in 0.3f64..8.0, extra in 0usize..25) {
        let k = mean.ceil() as usize + extra;
        let p = discretize_gamma(mean, sd, k).unwrap();
        prop_assert_eq!(p.len(), k);
        prop_assert!(p.iter().all(|x| *x >= 0.0));
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn profile_normalization_is_scale_invariant(raw in prop::collection::vec(0.01f64..5.0, 1..20), c in 0.1f64..100.0) {
        let a = InfectivityProfile::from_unnormalized(raw.clone()).unwrap();
        let b = InfectivityProfile::from_unnormalized(raw.iter().map(|x| x * c).collect()).unwrap();
        for (x, y) in a.weights().iter().zip(b.weights()) {
            prop_assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn multiplicative_weekdays_keep_detection_mass(raw in prop::collection::vec(0.05f64..1.0, 7), day in -50i64..50, origin in 0u8..7) {
        let base = DelayKernel::with_nondetect(discretize_gamma(6.0, 3.0, 21).unwrap().iter().map(|p| 0.8 * p).collect(), 0.2).unwrap();
        let total: f64 = raw.iter().sum();
        let mut w = [0.0; 7];
        for i in 0..7 {
            w[i] = raw[i] / total * base.detected_mass();
        }
        let d = weekday_multiplicative_delay(&base, w, origin).unwrap();
        let mass: f64 = (1..=d.max_lag()).map(|k| d.prob(day, k)).sum();
        prop_assert!((mass - base.detected_mass()).abs() < 1e-9);
        prop_assert!((d.nondetect(day) - base.nondetect()).abs() < 1e-12);
    }

    #[test]
    fn shift_weekdays_keep_detection_mass(rows in prop::collection::vec(prop::collection::vec(0.0f64..1.0, 7), 7), day in -50i64..50, origin in 0u8..7) {
        let base = DelayKernel::with_nondetect(discretize_gamma(6.0, 3.0, 14).unwrap().iter().map(|p| 0.9 * p).collect(), 0.1).unwrap();
        let mut v = [[0.0; 7]; 7];
        for i in 0..7 {
            let s: f64 = rows[i].iter().sum::<f64>() + 1.0;
            v[i][0] = 1.0 / s;
            for k in 0..7 {
                v[i][k] += rows[i][k] / s;
            }
        }
        let d = weekday_shift_delay(&base, v, origin).unwrap();
        let mass: f64 = (1..=d.max_lag()).map(|k| d.prob(day, k)).sum();
        prop_assert!((mass - base.detected_mass()).abs() < 1e-9);
    }
}
