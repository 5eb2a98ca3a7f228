//! The local inverse of `θ ↦ θ + η(θ)` and its quantitative bounds.

use hypodens_core::decomp::{eta_constants, local_inverse, EtaMap};
use nalgebra::DVector;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn random_point(rng: &mut ChaCha8Rng, m: usize, radius: f64) -> DVector<f64> {
    let dir = DVector::from_fn(m, |_, _| rng.sample::<f64, _>(StandardNormal)).normalize();
    dir * radius * rng.random::<f64>().powf(1.0 / m as f64)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn inverse_solves_and_obeys_the_two_sided_estimate(seed in any::<u64>(), m in 1usize..=4,
                                                        linear_norm in 0.0f64..0.45, log_q in -2.0f64..1.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let eta = EtaMap::random(m, linear_norm, 10f64.powf(log_q), &mut rng);
        let h = eta_constants(&eta, 0.0).unwrap().h_eta;
        let y = random_point(&mut rng, m, 0.5 * h);
        let sol = local_inverse(&eta, &y).unwrap();
        let phi = &sol.theta + eta.eval(&sol.theta);
        prop_assert!((phi - &y).norm() <= 1e-9);
        let (t, yn) = (sol.theta.norm(), y.norm());
        prop_assert!(t / 4.0 <= yn + 1e-15 && yn <= 4.0 * t + 1e-15);
    }

    #[test]
    fn points_outside_the_domain_are_rejected(seed in any::<u64>(), m in 1usize..=4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let eta = EtaMap::random(m, 0.2, 1.0, &mut rng);
        let h = eta_constants(&eta, 0.0).unwrap().h_eta;
        let y = DVector::from_element(m, 1.0).normalize() * (0.5 * h * 1.01);
        prop_assert!(local_inverse(&eta, &y).is_err());
    }
}

/// Forward composition: `Φ⁻¹(Φ(θ)) = θ` for a fixed four-dimensional map.
#[test]
fn inverse_undoes_the_forward_map() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let eta = EtaMap::random(4, 0.3, 0.5, &mut rng);
    let h = eta_constants(&eta, 0.0).unwrap().h_eta;
    let mut checked = 0;
    for _ in 0..1000 {
        let theta = random_point(&mut rng, 4, 0.1 * h);
        let y = &theta + eta.eval(&theta);
        if y.norm() > 0.5 * h {
            continue;
        }
        let back = local_inverse(&eta, &y).unwrap().theta;
        assert!((back - &theta).norm() <= 1e-9 * (1.0 + theta.norm()));
        checked += 1;
    }
    assert!(checked > 900, "{checked}");
}

#[test]
fn scalar_quadratic_has_the_closed_form_root() {
    for q in [-3.0, -0.1, 0.01, 2.0] {
        let eta = EtaMap::quadratic_1d(q);
        let h = eta_constants(&eta, 0.0).unwrap().h_eta;
        for k in -10..=10 {
            let y = 0.05 * h * k as f64;
            let exact = 2.0 * y / (1.0 + (1.0 + 2.0 * q * y).sqrt());
            let got = local_inverse(&eta, &DVector::from_element(1, y)).unwrap().theta[0];
            assert!((got - exact).abs() <= 1e-10 * exact.abs().max(1.0), "q={q} y={y}");
        }
    }
}

#[test]
fn zero_map_is_the_identity() {
    let eta = EtaMap::zero(3);
    let y = DVector::from_vec(vec![0.1, -0.2, 0.3]);
    let sol = local_inverse(&eta, &y).unwrap();
    assert_eq!(sol.theta, y);
}
