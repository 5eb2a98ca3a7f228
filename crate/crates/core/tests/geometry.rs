//! Properties of the directional-matrix geometry on random affine models.

use approx::assert_relative_eq;
use hypodens_core::fields::{
    aniso_norm, builtin_model, col_index, directional_matrix, lie_bracket, scale_matrix, AlphaFactor,
    GammaExtension, PolynomialModel, VectorFieldModel,
};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn model_and_point(seed: u64, n: usize) -> (PolynomialModel, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let model = PolynomialModel::random_affine(n, 2, 1.0, &mut rng);
    let x0 = (0..n).map(|i| (seed.rotate_left(i as u32 * 7) % 2001) as f64 / 1000.0 - 1.0).collect();
    (model, x0)
}

/// Minimal-norm preimage through the normal equations, `|A⁺y|² = yᵀ(AAᵀ)⁻¹y`.
fn normal_equations_norm(a: &DMatrix<f64>, y: &DVector<f64>) -> f64 {
    let gram = a * a.transpose();
    y.dot(&gram.cholesky().expect("full row rank").solve(y)).sqrt()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn brackets_are_antisymmetric(seed in any::<u64>(), n in 2usize..=3) {
        let (model, x0) = model_and_point(seed, n);
        for i in 0..model.noise_dim() {
            prop_assert!(lie_bracket(&model, i, i, 0.0, &x0).unwrap().amax() < 1e-12);
            for p in 0..i {
                let s = lie_bracket(&model, i, p, 0.0, &x0).unwrap() + lie_bracket(&model, p, i, 0.0, &x0).unwrap();
                prop_assert!(s.amax() < 1e-12);
            }
        }
    }

    #[test]
    fn norm_matches_normal_equations(seed in any::<u64>(), log_delta in -2.0f64..0.0, y in prop::collection::vec(-5.0f64..5.0, 3)) {
        let (model, x0) = model_and_point(seed, 3);
        let a = directional_matrix(&model, 0.0, &x0).unwrap();
        prop_assume!(a.lambda_min() > 1e-3 * a.lambda_max());
        let scaled = scale_matrix(&a, 10f64.powf(log_delta)).unwrap();
        let y = DVector::from_vec(y);
        let norm = aniso_norm(&scaled, &y).unwrap();
        let oracle = normal_equations_norm(scaled.entries(), &y);
        prop_assert!((norm - oracle).abs() <= 1e-8 * oracle.max(1e-300));
    }

    #[test]
    fn norm_is_homogeneous_and_subadditive(seed in any::<u64>(), c in -4.0f64..4.0,
                                           y in prop::collection::vec(-1.0f64..1.0, 3),
                                           z in prop::collection::vec(-1.0f64..1.0, 3)) {
        let (model, x0) = model_and_point(seed, 3);
        let a = directional_matrix(&model, 0.0, &x0).unwrap();
        prop_assume!(a.lambda_min() > 1e-3 * a.lambda_max());
        let scaled = scale_matrix(&a, 0.1).unwrap();
        let (y, z) = (DVector::from_vec(y), DVector::from_vec(z));
        let ny = aniso_norm(&scaled, &y).unwrap();
        let nz = aniso_norm(&scaled, &z).unwrap();
        prop_assert!((aniso_norm(&scaled, &(&y * c)).unwrap() - c.abs() * ny).abs() <= 1e-9 * (1.0 + ny));
        prop_assert!(aniso_norm(&scaled, &(&y + &z)).unwrap() <= (ny + nz) * (1.0 + 1e-12) + 1e-12);
    }

    #[test]
    fn gamma_rows_extend_the_scaled_matrix(seed in any::<u64>(), log_delta in -2.0f64..0.0) {
        let (model, x0) = model_and_point(seed, 3);
        let a = directional_matrix(&model, 0.0, &x0).unwrap();
        prop_assume!(a.lambda_min() > 1e-3 * a.lambda_max());
        let scaled = scale_matrix(&a, 10f64.powf(log_delta)).unwrap();
        let gamma = GammaExtension::new(&scaled).unwrap();
        let (n, m) = (gamma.n(), gamma.m());
        let g = gamma.matrix();
        prop_assert!((g.rows(0, n) - scaled.entries()).amax() < 1e-14);
        let c = gamma.complement();
        prop_assert!((c * c.transpose() - DMatrix::identity(m - n, m - n)).amax() < 1e-12);
        prop_assert!((scaled.entries() * c.transpose()).amax() < 1e-12 * (1.0 + scaled.entries().amax()));
        let u = DVector::from_fn(m, |i, _| (i as f64 + 1.0).sin());
        prop_assert!((g * gamma.solve(&u) - &u).amax() < 1e-9 * (1.0 + u.amax()));
    }
}

#[test]
fn column_layout_and_scaling() {
    let m = builtin_model("heisenberg").unwrap();
    let a = directional_matrix(&m, 0.0, &[0.3, -0.2, 1.0]).unwrap();
    assert_eq!((a.n(), a.d(), a.m()), (3, 2, 4));
    assert_eq!(col_index(2, 1, 0), 1);
    assert_eq!(col_index(2, 0, 1), 2);
    let delta = 0.04;
    let s = scale_matrix(&a, delta).unwrap();
    for i in 0..2 {
        for p in 0..2 {
            let f = if i == p { delta.sqrt() } else { delta };
            assert_relative_eq!(s.column(i, p), a.column(i, p) * f, epsilon = 1e-15);
        }
    }
    // [σ₁, σ₂] = e₃ at the origin
    let a0 = directional_matrix(&m, 0.0, &[0.0; 3]).unwrap();
    assert_relative_eq!(a0.column(0, 1), DVector::from_vec(vec![0.0, 0.0, 1.0]), epsilon = 1e-12);
    assert_relative_eq!(a0.column(1, 0), DVector::from_vec(vec![0.0, 0.0, -1.0]), epsilon = 1e-12);
    assert_eq!(m.noise_dim(), 2);
}

#[test]
fn heisenberg_vertical_norm_and_determinant() {
    let m = builtin_model("heisenberg").unwrap();
    for delta in [0.01, 0.1, 0.5] {
        let s = scale_matrix(&directional_matrix(&m, 0.0, &[0.0; 3]).unwrap(), delta).unwrap();
        let norm = aniso_norm(&s, &DVector::from_vec(vec![0.0, 0.0, 1.0])).unwrap();
        assert_relative_eq!(norm, 1.0 / (2f64.sqrt() * delta), max_relative = 1e-12);
        let alpha = AlphaFactor::new(&s).unwrap();
        assert_relative_eq!(alpha.det(), 2f64.sqrt() * delta * delta, max_relative = 1e-12);
        assert!(alpha.u().determinant() > 0.0);
    }
}

/// Two nearly equal singular values: the factorization must still reconstruct
/// `A_δ` to rounding.
#[test]
fn factorization_is_accurate_with_close_singular_values() {
    let (d, s) = (0.06057413941700669, 0.24611814117818842);
    let entries = DMatrix::from_row_slice(
        3,
        4,
        &[s, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, s, -0.007712515180519155, -d, d, -0.009056104347344697],
    );
    let a = hypodens_core::fields::DirectionalMatrix::from_entries(entries.clone(), 2, 0.0, vec![0.0; 3]).unwrap();
    let f = AlphaFactor::new(&a).unwrap();
    let rebuilt = f.u() * DMatrix::from_diagonal(f.singular_values()) * f.v_thin().transpose();
    assert!((rebuilt - &entries).amax() < 1e-15);
    assert!((f.u().transpose() * f.u() - DMatrix::identity(3, 3)).amax() < 1e-15);
    assert!((f.v_thin().transpose() * f.v_thin() - DMatrix::identity(3, 3)).amax() < 1e-15);
    let y = DVector::from_vec(vec![0.3, -1.0, 0.7]);
    assert_relative_eq!(f.norm(&y), normal_equations_norm(&entries, &y), max_relative = 1e-13);
}
