use hypodens_core::fields::builtin_model;
use hypodens_core::paths::{support_statistics, QpConvention, SupportConfig};
use hypodens_core::rng::derive_seed;
use hypodens_core::sde::lambda_star_samples;
use hypodens_core::stats::quantile;
use serde_json::json;

use super::tolerances::*;
use super::{title_of, CriterionOutcome};
use crate::commands::fit_json;
use crate::error::CliResult;

pub(super) fn support(seed: u64) -> CliResult<CriterionOutcome> {
    let stats = support_statistics(&SupportConfig {
        d: 2,
        eps_grid: SUPPORT_EPS.to_vec(),
        rho: SUPPORT_RHO,
        n_samples: SUPPORT_SAMPLES,
        seed: derive_seed(seed, 90),
        steps: SUPPORT_STEPS,
        include_lambda: false,
        qp_convention: QpConvention::PBlock,
    })?;
    let table = stats.upsilon;
    let slope = table.slope.map(|f| f.slope).unwrap_or(f64::NAN);
    let nondegenerate = table.rows.iter().all(|r| r.nondegenerate());
    let margin = if nondegenerate && slope.is_finite() { SUPPORT_SLOPE_MAX - slope } else { f64::NEG_INFINITY };
    let detail = json!({
        "rows": table.rows,
        "fit": fit_json(table.slope),
        "all_nondegenerate": nondegenerate,
        "rho": SUPPORT_RHO,
        "samples": SUPPORT_SAMPLES,
    });
    Ok(CriterionOutcome::new(
        "9",
        title_of("9"),
        slope,
        format!("≤ {SUPPORT_SLOPE_MAX}, all intervals nondegenerate"),
        margin,
        detail,
    ))
}

pub(super) fn malliavin(seed: u64) -> CliResult<CriterionOutcome> {
    let m = builtin_model("heisenberg")?;
    let mut rows = Vec::new();
    let (mut lo_med, mut hi_med, mut min_q05) = (f64::INFINITY, 0.0f64, f64::INFINITY);
    for &delta in &LAMBDA_DELTAS {
        let l = lambda_star_samples(&m, &[0.0; 3], delta, LAMBDA_PATHS, LAMBDA_STEPS, derive_seed(seed, delta.to_bits()))?;
        let (q05, med) = (quantile(&l, 0.05), quantile(&l, 0.5));
        lo_med = lo_med.min(med);
        hi_med = hi_med.max(med);
        min_q05 = min_q05.min(q05);
        rows.push(json!({ "delta": delta, "q05": q05, "median": med }));
    }
    let spread = hi_med / lo_med;
    let margin = ((LAMBDA_MEDIAN_SPREAD - spread) / LAMBDA_MEDIAN_SPREAD).min((min_q05 - LAMBDA_Q05_FLOOR) / LAMBDA_Q05_FLOOR);
    let detail = json!({
        "rows": rows,
        "median_spread": spread,
        "min_q05": min_q05,
        "q05_floor": LAMBDA_Q05_FLOOR,
        "paths_per_delta": LAMBDA_PATHS,
        "steps_per_sub": LAMBDA_STEPS,
    });
    Ok(CriterionOutcome::new(
        "10",
        title_of("10"),
        spread,
        format!("median spread < {LAMBDA_MEDIAN_SPREAD}, 5% quantile > {LAMBDA_Q05_FLOOR}"),
        margin,
        detail,
    ))
}
