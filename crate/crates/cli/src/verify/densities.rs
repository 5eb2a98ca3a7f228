use hypodens_core::density::{
    diagonal_exponent_of, estimate_series, lower_bound_of, tail_of, Centering, DensityEstimate, DensityProtocol,
};
use hypodens_core::fields::VectorFieldModel;
use serde_json::json;

use super::tolerances::*;
use super::{model, title_of, CriterionOutcome, Shared};
use crate::commands::{bandwidth_slopes, fit_json};
use crate::error::{CliError, CliResult};

fn protocol(seed: u64) -> DensityProtocol {
    DensityProtocol {
        delta_grid: DELTA_GRID.to_vec(),
        n_paths: DENSITY_PATHS,
        steps_per_sub: DENSITY_STEPS,
        seed,
        centering: Centering::X0PlusBDelta,
        bandwidth_scale: 1.0,
    }
}

pub(super) fn series(name: &str, seed: u64) -> CliResult<Vec<DensityEstimate>> {
    let m = model(name)?;
    Ok(estimate_series(&m, &vec![0.0; m.dim()], &protocol(seed))?)
}

pub(super) fn diagonal(shared: &Shared, id: &str, name: &str) -> CliResult<CriterionOutcome> {
    let m = model(name)?;
    let x0 = vec![0.0; m.dim()];
    let owned;
    let series: &[DensityEstimate] = if name == "heisenberg" {
        shared.heisenberg_series()?
    } else {
        owned = series(name, shared.seed)?;
        &owned
    };
    let diag = diagonal_exponent_of(series, &m, &x0)?;
    let slope = diag.slope.ok_or_else(|| CliError::Failed("fewer than two uncensored diagonal values".into()))?;
    let tol = if name == "elliptic" { ELLIPTIC_SLOPE_TOL } else { DIAGONAL_SLOPE_TOL };
    let detail = json!({
        "rows": diag.rows,
        "fit": fit_json(diag.slope),
        "bandwidth_slopes": bandwidth_slopes(series, &m, &x0)?,
        "paths_per_delta": DENSITY_PATHS,
        "steps_per_sub": DENSITY_STEPS,
    });
    Ok(CriterionOutcome::within(id, title_of(id), slope.slope, diag.expected_slope, tol, detail))
}

pub(super) fn lower_bound(shared: &Shared) -> CliResult<CriterionOutcome> {
    let m = model("heisenberg")?;
    let report = lower_bound_of(shared.heisenberg_series()?, &m, &[0.0; 3], LOWER_RADIUS, Centering::X0PlusBDelta)?;
    let detail = json!({
        "r": report.r,
        "rows": report.rows,
        "reference": report.reference,
    });
    Ok(CriterionOutcome::at_least("11", title_of("11"), report.min_ratio, LOWER_RATIO_MIN, detail))
}

pub(super) fn tail(shared: &Shared) -> CliResult<CriterionOutcome> {
    let m = model("heisenberg")?;
    let report = tail_of(shared.heisenberg_series()?, &m, &[0.0; 3], TAIL_P)?;
    // both conditions as one margin, each normalized by its limit
    let margin = ((TAIL_VARIATION_MAX - report.variation) / TAIL_VARIATION_MAX)
        .min((TAIL_RECENTERING_MAX - report.max_recentering_ratio) / TAIL_RECENTERING_MAX);
    let detail = json!({
        "p": report.p,
        "rows": report.rows,
        "variation": report.variation,
        "max_recentering_ratio": report.max_recentering_ratio,
    });
    Ok(CriterionOutcome::new(
        "12",
        title_of("12"),
        report.variation,
        format!("variation < {TAIL_VARIATION_MAX}, recentering ratio < {TAIL_RECENTERING_MAX}"),
        margin,
        detail,
    ))
}
