use hypodens_core::decomp::{remainder_scaling, taylor_principal, Conventions, KeyEnvelope};
use hypodens_core::fields::PolynomialModel;
use hypodens_core::paths::BrownianGrid;
use hypodens_core::rng::{derive_seed, path_rng};
use hypodens_core::stats::sum;
use rand::Rng;
use rayon::prelude::*;
use serde_json::json;

use super::tolerances::*;
use super::{model, title_of, CriterionOutcome};
use crate::commands::fit_json;
use crate::error::CliResult;

const N: usize = 3;
const D: usize = 2;

/// Sum consecutive groups of `factor` fine increments.
fn coarsen(fine: &BrownianGrid, factor: usize) -> hypodens_core::Result<BrownianGrid> {
    let d = fine.d();
    let mut inc = vec![0.0; fine.n_steps() / factor * d];
    for k in 0..fine.n_steps() {
        for i in 0..d {
            inc[(k / factor) * d + i] += fine.dw(k, i);
        }
    }
    BrownianGrid::from_increments(d, fine.delta(), fine.steps_per_sub() / factor, &inc)
}

/// Key residual norms of model `idx` on one fine path and its coarsening.
fn model_residuals(seed: u64, idx: u64) -> hypodens_core::Result<(f64, f64)> {
    let mut rng = path_rng(seed, idx);
    let model = PolynomialModel::random_affine(N, D, 1.0, &mut rng);
    let x0: Vec<f64> = (0..N).map(|_| rng.random_range(-1.0f64..=1.0)).collect();
    let fine = BrownianGrid::sample_with(&mut rng, D, KEY_DELTA, KEY_FINE_STEPS)?;
    let coarse = coarsen(&fine, KEY_FINE_STEPS / KEY_COARSE_STEPS)?;
    let r = |p: &BrownianGrid| taylor_principal(&model, &x0, p, Conventions::default()).map(|b| b.residual_key.norm());
    Ok((r(&coarse)?, r(&fine)?))
}

fn residual_set(seed: u64, count: u64) -> hypodens_core::Result<Vec<(f64, f64)>> {
    (0..count).into_par_iter().map(|idx| model_residuals(seed, idx)).collect()
}

pub(super) fn key_residual(seed: u64) -> CliResult<CriterionOutcome> {
    let h_coarse = KeyEnvelope::unit_step(D, KEY_COARSE_STEPS);
    let h_fine = KeyEnvelope::unit_step(D, KEY_FINE_STEPS);
    let calibration = residual_set(derive_seed(seed, 40), KEY_CALIBRATION_MODELS)?;
    let samples: Vec<(f64, f64, f64)> = calibration
        .iter()
        .flat_map(|&(c, f)| [(c, h_coarse, KEY_DELTA), (f, h_fine, KEY_DELTA)])
        .collect();
    let envelope = KeyEnvelope::fit(&samples);
    let test = residual_set(derive_seed(seed, 41), KEY_MODELS)?;
    let worst = test
        .iter()
        .map(|&(c, f)| (c / envelope.bound(h_coarse, KEY_DELTA)).max(f / envelope.bound(h_fine, KEY_DELTA)))
        .fold(0.0, f64::max);
    let rms = |sel: fn(&(f64, f64)) -> f64| (sum(test.iter().map(|t| sel(t).powi(2))) / test.len() as f64).sqrt();
    let (rms_coarse, rms_fine) = (rms(|t| t.0), rms(|t| t.1));
    let ratio = rms_coarse / rms_fine;
    let ratio_margin = KEY_REFINEMENT_TOL - (ratio - KEY_REFINEMENT_RATIO).abs();
    let envelope_margin = (KEY_ENVELOPE_FACTOR - worst) / KEY_ENVELOPE_FACTOR;
    let detail = json!({
        "envelope_c": envelope.c,
        "max_residual_over_envelope": worst,
        "envelope_factor": KEY_ENVELOPE_FACTOR,
        "rms_coarse": rms_coarse,
        "rms_fine": rms_fine,
        "steps": [KEY_COARSE_STEPS, KEY_FINE_STEPS],
        "models": KEY_MODELS,
        "calibration_models": KEY_CALIBRATION_MODELS,
        "delta": KEY_DELTA,
    });
    Ok(CriterionOutcome::new(
        "4",
        title_of("4"),
        ratio,
        format!(
            "RMS ratio {KEY_REFINEMENT_RATIO} ± {KEY_REFINEMENT_TOL}, residuals ≤ {KEY_ENVELOPE_FACTOR}× envelope"
        ),
        ratio_margin.min(envelope_margin),
        detail,
    ))
}

pub(super) fn remainder(seed: u64, id: &str, name: &str) -> CliResult<CriterionOutcome> {
    let m = model(name)?;
    let table = remainder_scaling(&m, &[0.0; N], derive_seed(seed, 50), &DELTA_GRID, REMAINDER_PATHS, REMAINDER_STEPS)?;
    let max_rms = table.rows.iter().map(|r| r.rms).fold(0.0, f64::max);
    let slope = table.slope.map(|f| f.slope).unwrap_or(f64::NAN);
    let detail = json!({
        "rows": table.rows,
        "fit": fit_json(table.slope),
        "max_rms": max_rms,
        "paths_per_delta": REMAINDER_PATHS,
        "steps_per_sub": REMAINDER_STEPS,
    });
    Ok(CriterionOutcome::within(id, title_of(id), slope, REMAINDER_SLOPE, REMAINDER_SLOPE_TOL, detail))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn coarsening_preserves_the_path_at_coarse_nodes() {
        let fine = BrownianGrid::sample(3, 0, 2, 0.1, 32).unwrap();
        let coarse = coarsen(&fine, 4).unwrap();
        assert_eq!(coarse.steps_per_sub(), 8);
        for k in 0..=coarse.n_steps() {
            for i in 0..2 {
                assert!((coarse.w(k)[i] - fine.w(4 * k)[i]).abs() < 1e-14);
            }
        }
    }
}
