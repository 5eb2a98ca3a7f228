use hypodens_core::decomp::{eta_constants, local_inverse, localized_histogram, perturbed_gaussian_bounds, EtaMap};
use hypodens_core::density::ball_mesh;
use hypodens_core::rng::{derive_seed, path_rng};
use hypodens_core::stats::sum;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde_json::{json, Map, Value};

use super::tolerances::*;
use super::{title_of, CriterionOutcome};
use crate::error::CliResult;

#[derive(Default)]
struct Tally {
    cases: u64,
    failures: u64,
    max_iterations: usize,
    max_residual: f64,
    min_estinv_margin: Option<f64>,
}

impl Tally {
    fn json(&self) -> Value {
        json!({
            "cases": self.cases,
            "failures": self.failures,
            "max_iterations": self.max_iterations,
            "max_residual": self.max_residual,
            "min_estinv_margin": self.min_estinv_margin,
        })
    }
}

pub(super) fn local_inverse_suite(seed: u64) -> CliResult<CriterionOutcome> {
    let mut detail = Map::new();
    let mut failures = 0;
    for (g, &m) in INVERSION_DIMS.iter().enumerate() {
        let base = derive_seed(seed, 70 + g as u64);
        let mut t = Tally::default();
        for k in 0..INVERSION_CASES {
            let mut rng = path_rng(base, k);
            let linear_norm = rng.random_range(0.0..=0.45);
            let quad_scale = 10f64.powf(rng.random_range(-2.0..=1.0));
            let eta = EtaMap::random(m, linear_norm, quad_scale, &mut rng);
            let h_eta = eta_constants(&eta, 0.0)?.h_eta;
            let dir = DVector::from_fn(m, |_, _| rng.sample::<f64, _>(StandardNormal)).normalize();
            let radius = 0.5 * h_eta * rng.random_range(0.0..=1.0f64).powf(1.0 / m as f64);
            let y = dir * radius;
            t.cases += 1;
            let Ok(sol) = local_inverse(&eta, &y) else {
                t.failures += 1;
                continue;
            };
            let phi = &sol.theta + eta.eval(&sol.theta);
            let residual = (phi - &y).norm();
            let (th, yn) = (sol.theta.norm(), y.norm());
            let estinv = (yn - th / 4.0).min(4.0 * th - yn);
            t.max_iterations = t.max_iterations.max(sol.iterations);
            t.max_residual = t.max_residual.max(residual);
            t.min_estinv_margin = Some(t.min_estinv_margin.map_or(estinv, |v: f64| v.min(estinv)));
            if residual > FIXED_POINT_TOL || estinv < 0.0 || sol.iterations > 200 {
                t.failures += 1;
            }
        }
        failures += t.failures;
        detail.insert(format!("m{m}"), t.json());
    }

    // η(θ) = (q/2)θ²: root θ = 2y / (1 + √(1 + 2qy))
    let base = derive_seed(seed, 79);
    let mut worst: f64 = 0.0;
    let mut closed_failures = 0;
    for k in 0..INVERSION_CASES {
        let mut rng = path_rng(base, k);
        let q = 10f64.powf(rng.random_range(-2.0..=1.0)) * if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        let eta = EtaMap::quadratic_1d(q);
        let h_eta = eta_constants(&eta, 0.0)?.h_eta;
        let y = rng.random_range(-0.5 * h_eta..=0.5 * h_eta);
        let exact = 2.0 * y / (1.0 + (1.0 + 2.0 * q * y).sqrt());
        match local_inverse(&eta, &DVector::from_element(1, y)) {
            Ok(sol) => {
                let err = (sol.theta[0] - exact).abs() / exact.abs().max(1.0);
                worst = worst.max(err);
                if err > CLOSED_FORM_TOL {
                    closed_failures += 1;
                }
            }
            Err(_) => closed_failures += 1,
        }
    }
    detail.insert(
        "closed_form_1d".into(),
        json!({ "cases": INVERSION_CASES, "failures": closed_failures, "max_error": worst }),
    );
    let total = failures + closed_failures;
    Ok(CriterionOutcome::new(
        "7",
        title_of("7"),
        total as f64,
        format!("0 failures (Φ(θ) = y to {FIXED_POINT_TOL:e}, closed form to {CLOSED_FORM_TOL:e})"),
        -(total as f64),
        Value::Object(detail),
    ))
}

/// `Q = diag(1, 1/2)` and a small symmetric quadratic `η` with no linear part.
pub fn sandwich_problem() -> (DMatrix<f64>, EtaMap) {
    let q = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 0.5]));
    let h0 = DMatrix::from_row_slice(2, 2, &[0.01, 0.005, 0.005, 0.0]);
    let h1 = DMatrix::from_row_slice(2, 2, &[0.0, 0.005, 0.005, 0.01]);
    let eta = EtaMap::new(DMatrix::zeros(2, 2), vec![h0, h1]).expect("consistent shapes");
    (q, eta)
}

pub(super) fn sandwich(seed: u64) -> CliResult<CriterionOutcome> {
    let (q, eta) = sandwich_problem();
    let points = ball_mesh(2, SANDWICH_RADIUS, SANDWICH_POINTS - 1)?;
    let hist = localized_histogram(
        &q,
        &eta,
        SANDWICH_RADIUS,
        &points,
        SANDWICH_HALF_WIDTH,
        SANDWICH_SAMPLES,
        derive_seed(seed, 80),
    )?;
    let mut rows = Vec::with_capacity(points.len());
    let mut worst = f64::INFINITY;
    let mut violations = Vec::new();
    for (z, h) in points.iter().zip(&hist) {
        let b = perturbed_gaussian_bounds(&q, &eta, SANDWICH_RADIUS, z)?;
        if !b.hypotheses.holds() {
            violations.extend(b.hypotheses.violations.iter().cloned());
        }
        // ≥ 1 on both sides when the histogram sits between the curves
        let ratio = (h.p_wide / b.lower).min(b.upper / h.p_narrow);
        worst = worst.min(ratio);
        rows.push(json!({
            "z": h.z,
            "lower": b.lower,
            "p_wide": h.p_wide,
            "p_narrow": h.p_narrow,
            "upper": b.upper,
            "hits": h.hits,
        }));
    }
    violations.sort();
    violations.dedup();
    let margin = if violations.is_empty() { worst - 1.0 } else { f64::NEG_INFINITY };
    let detail = json!({
        "points": rows,
        "hypothesis_violations": violations,
        "samples": SANDWICH_SAMPLES,
        "r": SANDWICH_RADIUS,
        "half_width": SANDWICH_HALF_WIDTH,
        "total_hits": sum(hist.iter().map(|h| h.hits as f64)),
    });
    Ok(CriterionOutcome::new(
        "8",
        title_of("8"),
        worst,
        "≥ 1 (min of p_wide/lower and upper/p_narrow)".into(),
        margin,
        detail,
    ))
}
