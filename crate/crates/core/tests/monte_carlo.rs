//! Brownian sampling, the kernel estimate and seed determinism.

use hypodens_core::density::{sample_scaled_endpoints, Centering, DensityEstimate};
use hypodens_core::fields::builtin_model;
use hypodens_core::paths::{conditional_covariance, BrownianGrid};
use hypodens_core::stats::{mean, variance};
use proptest::prelude::*;

#[test]
fn brownian_endpoint_variance_is_delta() {
    let (d, delta) = (2, 0.3);
    let ends: Vec<[f64; 2]> = (0..20_000)
        .map(|k| {
            let p = BrownianGrid::sample(7, k, d, delta, 8).unwrap();
            [p.endpoint()[0], p.endpoint()[1]]
        })
        .collect();
    for i in 0..d {
        let xs: Vec<f64> = ends.iter().map(|e| e[i]).collect();
        // standard error of the variance is about δ√(2/N) ≈ 0.003
        assert!(mean(&xs).abs() < 0.02, "{}", mean(&xs));
        assert!((variance(&xs) - delta).abs() < 0.015, "{}", variance(&xs));
    }
}

#[test]
fn paths_depend_only_on_seed_and_stream() {
    let a = BrownianGrid::sample(11, 5, 3, 0.2, 16).unwrap();
    let b = BrownianGrid::sample(11, 5, 3, 0.2, 16).unwrap();
    let c = BrownianGrid::sample(11, 6, 3, 0.2, 16).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, c);
    let mut acc = 0.0;
    for k in 0..a.n_steps() {
        acc += a.dw(k, 1);
    }
    assert!((acc - a.endpoint()[1]).abs() < 1e-12);
}

#[test]
fn conditional_covariance_has_unit_trace_per_direction() {
    let p = BrownianGrid::sample(3, 0, 3, 0.5, 32).unwrap();
    let cov = conditional_covariance(&p);
    for (i, block) in cov.blocks().iter().enumerate() {
        assert!((block[(i, i)] - 1.0 / 3.0).abs() < 1e-15);
        assert!((block - block.transpose()).amax() < 1e-15);
    }
}

fn elliptic_kde(n_paths: u64) -> DensityEstimate {
    let m = builtin_model("elliptic").unwrap();
    let s = sample_scaled_endpoints(&m, &[0.0, 0.0], 0.1, n_paths, 8, 99, Centering::X0).unwrap();
    DensityEstimate::new(s, 1.0).unwrap()
}

/// Scaled elliptic endpoints are exactly standard normal, so the estimate at the
/// origin approaches `1/(2π)`.
#[test]
fn kde_is_consistent_for_a_gaussian() {
    let kde = elliptic_kde(100_000);
    let target = 1.0 / (2.0 * std::f64::consts::PI);
    let got = kde.evaluate(&[0.0, 0.0]);
    assert!((got / target - 1.0).abs() < 0.05, "{got} vs {target}");
    let off = kde.evaluate(&[1.0, 0.0]);
    assert!((off / (target * (-0.5f64).exp()) - 1.0).abs() < 0.05, "{off}");
}

#[test]
fn kde_is_invariant_under_thread_count() {
    let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap().install(|| elliptic_kde(5000));
    let four = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap().install(|| elliptic_kde(5000));
    assert_eq!(one.samples().values, four.samples().values);
    assert_eq!(one.evaluate(&[0.3, -0.1]).to_bits(), four.evaluate(&[0.3, -0.1]).to_bits());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn kde_is_nonnegative_and_bounded(z in prop::collection::vec(-6.0f64..6.0, 2)) {
        let kde = elliptic_kde(2000);
        let v = kde.evaluate(&z);
        let peak: f64 = kde.bandwidth().iter().map(|h| 1.0 / (h * (2.0 * std::f64::consts::PI).sqrt())).product();
        prop_assert!(v >= 0.0 && v <= peak);
    }

    #[test]
    fn kde_of_a_symmetrized_sample_is_even(z in prop::collection::vec(-3.0f64..3.0, 2)) {
        let base = elliptic_kde(1000);
        let mut s = base.samples().clone();
        let mut values: Vec<f64> = s.values.to_vec();
        values.extend(s.values.iter().map(|v| -v));
        s.values = std::sync::Arc::new(values);
        let kde = DensityEstimate::new(s, 1.0).unwrap();
        let neg: Vec<f64> = z.iter().map(|v| -v).collect();
        let (a, b) = (kde.evaluate(&z), kde.evaluate(&neg));
        prop_assert!((a - b).abs() <= 1e-12 * a.max(1e-300));
    }
}
