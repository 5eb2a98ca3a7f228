//! Brownian paths on the sub-interval grid `s_k = kδ/d`, iterated integrals,
//! the Gaussian coordinates `Θ`, their conditional covariance, support
//! functionals and mollified localization weights.

mod covariance;
mod grid;
mod support;
mod support_stats;

pub use covariance::{conditional_covariance, ConditionalCovariance};
pub use grid::{
    delta_vector, increments_and_iterated, sample_path, theta_vector, BrownianGrid, Increments, MIN_STEPS_PER_SUB,
};
pub use support::{
    localization_from_parts, localization_weights, mollifier, support_quantities, LocalizationWeights, QpConvention,
    SupportQuantities,
};
pub use support_stats::{
    detq_inverse_moments, support_statistics, unit_horizon_sample, FrequencyRow, FrequencyTable, MomentRow,
    SupportConfig, SupportStatistics, UnitHorizonSample,
};

#[cfg(test)]
mod tests {
    use super::*;

    fn frozen_path(d: usize, n: usize, p_only: usize) -> BrownianGrid {
        // only coordinate `p_only` moves
        let incs: Vec<f64> = (0..n * d)
            .flat_map(|k| (0..d).map(move |i| if i == p_only { 0.1 * ((k % 5) as f64 - 2.0) } else { 0.0 }))
            .collect();
        BrownianGrid::from_increments(d, 0.3, n, &incs).unwrap()
    }

    #[test]
    fn determinism_and_alignment() {
        let a = BrownianGrid::sample(9, 3, 2, 0.1, 16).unwrap();
        let b = BrownianGrid::sample(9, 3, 2, 0.1, 16).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, BrownianGrid::sample(9, 4, 2, 0.1, 16).unwrap());
        assert_eq!(a.w(0), &[0.0, 0.0]);
        assert_eq!(a.sub_start(1), 16);
        assert_eq!(a.n_steps(), 32);
        assert!(matches!(sample_path(1, 2, 0.1, 4), Err(crate::Error::Argument(_))));
    }

    #[test]
    fn diagonal_iterated_integral_is_half_square() {
        let path = sample_path(5, 3, 0.2, 32).unwrap();
        let inc = path.increments_and_iterated();
        for k in 0..3 {
            for i in 0..3 {
                assert_eq!(2.0 * inc.iterated(k, i, i), inc.delta(k, i) * inc.delta(k, i));
            }
        }
    }

    #[test]
    fn theta_layout_for_d2() {
        let delta = 0.2;
        let path = sample_path(11, 2, delta, 16).unwrap();
        let inc = path.increments_and_iterated();
        let theta = theta_vector(&inc, delta);
        let expected = [
            inc.delta(0, 0) / delta.sqrt(),
            inc.iterated(0, 1, 0) / delta,
            inc.iterated(1, 0, 1) / delta,
            inc.delta(1, 1) / delta.sqrt(),
        ];
        for (a, b) in theta.iter().zip(expected) {
            assert_eq!(*a, b);
        }
    }

    #[test]
    fn theta_for_d1_is_scaled_endpoint() {
        let delta = 0.3;
        let path = sample_path(2, 1, delta, 16).unwrap();
        let theta = theta_vector(&path.increments_and_iterated(), delta);
        assert_eq!(theta.len(), 1);
        assert!((theta[0] - path.endpoint()[0] / delta.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn full_iterated_splits_into_blocks() {
        // left-point sums are additive across sub-intervals
        let path = sample_path(4, 3, 0.1, 16).unwrap();
        let inc = path.increments_and_iterated();
        let full = path.full_iterated();
        for i in 0..3 {
            for j in 0..3 {
                if i == j {
                    continue;
                }
                let mut v: f64 = (0..3).map(|k| inc.iterated(k, i, j)).sum();
                for p in 0..3 {
                    for l in p + 1..3 {
                        v += inc.delta(p, i) * inc.delta(l, j);
                    }
                }
                assert!((v - full[i * 3 + j]).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn covariance_structure() {
        let path = sample_path(21, 3, 0.4, 32).unwrap();
        let cov = conditional_covariance(&path);
        let q = cov.full();
        assert!((&q - q.transpose()).amax() < 1e-15);
        for p in 0..3 {
            assert_eq!(cov.blocks()[p][(p, p)], 1.0 / 3.0);
        }
        let det_full = q.determinant();
        assert!((det_full - cov.det()).abs() <= 1e-10 * det_full.abs().max(1e-300));
        let (lo, hi) = cov.eigen_extremes();
        assert!(lo >= -1e-12);
        let f = cov.frobenius_scaled();
        assert!(hi / 3.0 <= f + 1e-15 && f <= hi + 1e-15);
    }

    #[test]
    fn frozen_off_block_coordinates() {
        let path = frozen_path(2, 16, 0);
        let cov = conditional_covariance(&path);
        let b0 = &cov.blocks()[0];
        assert_eq!(b0[(0, 0)], 0.5);
        assert_eq!(b0[(0, 1)], 0.0);
        assert_eq!(b0[(1, 1)], 0.0);
        let s = support_quantities(&path, QpConvention::PBlock);
        assert_eq!(s.q_p[0], 0.0);
        assert_eq!(s.sup_terms[0], 0.0);
    }

    #[test]
    fn mollifier_pieces() {
        let a = 0.7;
        assert_eq!(mollifier(a, 0.0).unwrap(), 1.0);
        assert_eq!(mollifier(a, a).unwrap(), 1.0);
        assert_eq!(mollifier(a, -a).unwrap(), 1.0);
        assert_eq!(mollifier(a, 2.0 * a).unwrap(), 0.0);
        assert_eq!(mollifier(a, 5.0).unwrap(), 0.0);
        let x = 1.2 * a;
        let u: f64 = x - a;
        assert_eq!(mollifier(a, x).unwrap(), (1.0 - a * a / (a * a - u * u)).exp());
        assert_eq!(mollifier(a, x).unwrap(), mollifier(a, -x).unwrap());
        assert!(mollifier(0.0, 1.0).is_err());
    }

    #[test]
    fn large_q_kills_u_tilde() {
        // a path with big off-block motion puts q(B) beyond 2dε
        let incs: Vec<f64> = (0..32).flat_map(|_| [0.5, 0.5]).collect();
        let path = BrownianGrid::from_increments(2, 1.0, 16, &incs).unwrap();
        let theta = theta_vector(&path.increments_and_iterated(), 1.0);
        let w = localization_weights(&path, &theta, 0.1, 0.25, 1.0, QpConvention::PBlock).unwrap();
        assert_eq!(w.u_tilde, 0.0);
        assert!(!w.in_lambda);
    }

    #[test]
    fn unit_horizon_d1_and_moments() {
        let rows = detq_inverse_moments(1, &[0.5, 1.0, 2.0], 10, 3, 16).unwrap();
        for r in rows {
            assert_eq!(r.mean, 1.0);
        }
    }
}
