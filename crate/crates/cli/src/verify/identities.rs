//! Exact identities of the directional-matrix geometry, the conditional
//! covariance and the mollifier, each on randomized cases against an
//! independent computation.

use std::f64::consts::E;

use hypodens_core::fields::{
    aniso_norm, builtin_model, directional_matrix, eval_sigma, lie_bracket, scale_matrix, AlphaFactor,
    DirectionalMatrix, GammaExtension, PolynomialModel, VectorFieldModel,
};
use hypodens_core::paths::{conditional_covariance, mollifier, BrownianGrid};
use hypodens_core::rng::{derive_seed, path_rng};
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde_json::{json, Map, Value};

use super::tolerances::{BRACKET_TOL, IDENTITY_CASES, IDENTITY_TOL};
use super::{title_of, CriterionOutcome};
use crate::error::CliResult;

/// Worst excess over a tolerance across the cases of one identity.
struct Check {
    cases: u64,
    failures: u64,
    worst: f64,
}

impl Check {
    fn new() -> Self {
        Self { cases: 0, failures: 0, worst: f64::NEG_INFINITY }
    }

    /// `excess > 0` is a violation.
    fn record(&mut self, excess: f64) {
        self.cases += 1;
        if !(excess <= 0.0) {
            self.failures += 1;
        }
        self.worst = self.worst.max(if excess.is_nan() { f64::INFINITY } else { excess });
    }

    fn json(&self) -> Value {
        json!({ "cases": self.cases, "failures": self.failures, "worst_excess": self.worst })
    }
}

fn rel_excess(a: f64, b: f64, tol: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(f64::MIN_POSITIVE) - tol
}

fn normal_vec(rng: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.sample(StandardNormal))
}

struct Case {
    model: PolynomialModel,
    a: DirectionalMatrix,
    x0: Vec<f64>,
    delta: f64,
}

/// A model and point with `λ_*(A) ≥ 0.05 λ^*(A)` and `δ` log-uniform in
/// `[0.01, 1]`.
fn random_case(rng: &mut ChaCha8Rng) -> Case {
    loop {
        let model = match rng.random_range(0..4) {
            0 => builtin_model("heisenberg").expect("built in"),
            1 => builtin_model("grushin").expect("built in"),
            2 => PolynomialModel::random_affine(3, 2, 1.0, rng),
            _ => PolynomialModel::random_affine(2, 2, 1.0, rng),
        };
        let x0: Vec<f64> = (0..model.dim()).map(|_| rng.random_range(-1.0..=1.0)).collect();
        let delta = 10f64.powf(rng.random_range(-2.0..=0.0));
        if let Ok(a) = directional_matrix(&model, 0.0, &x0) {
            if a.lambda_min() >= 0.05 * a.lambda_max() {
                return Case { model, a, x0, delta };
            }
        }
    }
}

/// `|y|_{A_δ} = |A_δ⁺ y|` from a QR factorization of `A_δᵀ`, independent of
/// the singular-value route.
fn least_norm_oracle(a_delta: &DMatrix<f64>, y: &DVector<f64>) -> f64 {
    let r = a_delta.transpose().qr().r();
    r.transpose().solve_lower_triangular(y).expect("full rank").norm()
}

fn psi_reference(a: f64, x: f64) -> f64 {
    let ax = x.abs();
    if ax <= a {
        1.0
    } else if ax < 2.0 * a {
        (1.0 - a * a / (a * a - (ax - a).powi(2))).exp()
    } else {
        0.0
    }
}

pub(super) fn run(seed: u64) -> CliResult<CriterionOutcome> {
    let names = [
        "norm_sandwich",
        "norm_alpha",
        "column_lower_bound",
        "sigma_column_bound",
        "gamma_block",
        "gamma_norm",
        "heisenberg_det_alpha",
        "bracket_antisymmetry",
        "covariance_diagonal",
        "covariance_lambda_norm",
        "mollifier",
        "mollifier_log_bound",
    ];
    let mut checks: Vec<Check> = names.iter().map(|_| Check::new()).collect();
    let base = derive_seed(seed, 60);
    let heisenberg = builtin_model("heisenberg").expect("built in");

    for k in 0..IDENTITY_CASES {
        let mut rng = path_rng(base, k);
        let Case { model, a, x0, delta } = random_case(&mut rng);
        let (n, m, d) = (a.n(), a.m(), a.d());
        let scaled = scale_matrix(&a, delta)?;
        let alpha = AlphaFactor::new(&scaled)?;
        let y = normal_vec(&mut rng, n) * 10f64.powf(rng.random_range(-3.0..=3.0));
        let norm = aniso_norm(&scaled, &y)?;

        // |y|/(√δ λ^*) ≤ |y|_{A_δ} ≤ |y|/(δ λ_*)
        let lo = y.norm() / (delta.sqrt() * a.lambda_max());
        let hi = y.norm() / (delta * a.lambda_min());
        checks[0].record(((lo - norm) / norm).max((norm - hi) / hi) - IDENTITY_TOL);

        let oracle = least_norm_oracle(scaled.entries(), &y);
        checks[1].record(rel_excess(norm, oracle, IDENTITY_TOL).max(rel_excess(alpha.norm(&y), oracle, IDENTITY_TOL)));

        let v = normal_vec(&mut rng, n).normalize();
        let xi = alpha.apply_inverse_transpose(&v);
        let best = (0..m).map(|j| xi.dot(&scaled.entries().column(j)).abs()).fold(0.0, f64::max);
        checks[2].record(1.0 / m as f64 - best - IDENTITY_TOL);

        let worst_sigma = (0..d)
            .map(|j| eval_sigma(&model, j, 0.0, &x0).map(|s| delta.sqrt() * alpha.apply_inverse(&s).norm()))
            .collect::<hypodens_core::Result<Vec<_>>>()?
            .into_iter()
            .fold(0.0, f64::max);
        checks[3].record(worst_sigma - 1.0 - IDENTITY_TOL);

        let gamma = GammaExtension::new(&scaled)?;
        let g = gamma.matrix();
        let mut target = DMatrix::identity(m, m);
        let aat = scaled.entries() * scaled.entries().transpose();
        target.view_mut((0, 0), (n, n)).copy_from(&aat);
        let scale = aat.amax().max(1.0);
        checks[4].record((g * g.transpose() - target).amax() / scale - IDENTITY_TOL);

        let z = normal_vec(&mut rng, n);
        checks[5].record(rel_excess(gamma.norm(&gamma.embed_zero(&z)), least_norm_oracle(scaled.entries(), &z), IDENTITY_TOL));

        let hx: Vec<f64> = (0..3).map(|_| rng.random_range(-2.0..=2.0)).collect();
        let h_delta = 10f64.powf(rng.random_range(-2.0..=0.0));
        let h_alpha = AlphaFactor::new(&scale_matrix(&directional_matrix(&heisenberg, 0.0, &hx)?, h_delta)?)?;
        checks[6].record(rel_excess(h_alpha.det(), 2f64.sqrt() * h_delta * h_delta, IDENTITY_TOL));

        let mut worst_bracket: f64 = 0.0;
        for i in 0..d {
            for p in 0..d {
                let s = lie_bracket(&model, i, p, 0.0, &x0)? + lie_bracket(&model, p, i, 0.0, &x0)?;
                worst_bracket = worst_bracket.max(s.amax());
            }
        }
        checks[7].record(worst_bracket - BRACKET_TOL);

        let pd = rng.random_range(2..=3usize);
        let path = BrownianGrid::sample(derive_seed(base, 1), k, pd, rng.random_range(0.01..=1.0), 16)?;
        let cov = conditional_covariance(&path);
        let diag = (0..pd).map(|p| (cov.blocks()[p][(p, p)] - 1.0 / pd as f64).abs()).fold(0.0, f64::max);
        checks[8].record(diag - f64::EPSILON);

        let full = cov.full();
        let mm = full.nrows() as f64;
        let top = SymmetricEigen::new(full.clone()).eigenvalues.max();
        let scaled_frob = (full.norm_squared() / mm).sqrt();
        let excess = ((top / mm.sqrt() - scaled_frob) / top)
            .max((scaled_frob - top) / top)
            .max(rel_excess(scaled_frob, cov.frobenius_scaled(), IDENTITY_TOL) + IDENTITY_TOL)
            - IDENTITY_TOL;
        checks[9].record(excess);

        let ma = 10f64.powf(rng.random_range(-1.0..=1.0));
        let mx = rng.random_range(-3.0 * ma..=3.0 * ma);
        let mut ex = (mollifier(ma, mx)? - psi_reference(ma, mx)).abs();
        ex = ex.max((mollifier(ma, mx)? - mollifier(ma, -mx)?).abs());
        ex = ex.max((mollifier(ma, 0.0)? - 1.0).abs()).max(mollifier(ma, 2.0 * ma)?.abs());
        checks[10].record(ex - IDENTITY_TOL);
    }

    // sup_x |ln ψ_a|^p ψ_a = (p/e)^p, attained inside (a, 2a)
    for p in [1.0f64, 2.0, 4.0] {
        for a in [0.25, 0.5, 1.0] {
            let exact = (p / E).powf(p);
            const GRID: usize = 200_000;
            let mut sup: f64 = 0.0;
            for k in 1..GRID {
                let x = a + a * k as f64 / GRID as f64;
                let v = mollifier(a, x)?;
                if v > 0.0 {
                    sup = sup.max(v.ln().abs().powf(p) * v);
                }
            }
            // below the exact sup, and within grid resolution of it; C/a^p with C = (p/e)^p
            let excess = ((sup - exact) / exact - IDENTITY_TOL)
                .max((exact - sup) / exact - 1e-6)
                .max(sup - exact / a.powf(p));
            checks[11].record(excess);
        }
    }

    let failing = checks.iter().filter(|c| c.failures > 0).count();
    let mut detail = Map::new();
    for (name, c) in names.iter().zip(&checks) {
        detail.insert(name.to_string(), c.json());
    }
    detail.insert("tolerance".into(), json!(IDENTITY_TOL));
    Ok(CriterionOutcome::new(
        "6",
        title_of("6"),
        failing as f64,
        "0 failing identities".into(),
        -(failing as f64),
        Value::Object(detail),
    ))
}
