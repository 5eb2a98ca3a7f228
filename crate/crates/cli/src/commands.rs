//! Subcommand bodies. Each fills the report and writes its own tables.

use std::time::Instant;

use hypodens_core::decomp::{remainder_scaling, taylor_principal, Conventions};
use hypodens_core::density::{
    diagonal_exponent_of, estimate_series, lower_bound_of, recentering_norm, sample_scaled_endpoints, tail_of,
    DensityEstimate, DensityProtocol, MeshPoint,
};
use hypodens_core::fields::{
    aniso_norm, dim_span_sigma, directional_matrix, hoermander_lambda, scale_matrix, AlphaFactor, VectorFieldModel,
};
use hypodens_core::paths::{support_statistics, BrownianGrid, FrequencyTable, SupportConfig};
use hypodens_core::rng::derive_seed;
use hypodens_core::sde::lambda_star_samples;
use hypodens_core::stats::{quantile, LineFit};
use nalgebra::DVector;
use rayon::prelude::*;
use serde_json::{json, Value};

use crate::args::{Cli, Command};
use crate::config::{ExperimentConfig, ResolvedModel};
use crate::error::{CliError, CliResult};
use crate::output::{num, Artifacts, Report, Timings};
use crate::verify;

/// What a finished run leaves behind besides its files.
#[derive(Debug)]
pub struct RunOutcome {
    pub report: Report,
    /// Lines for standard output.
    pub console: Vec<String>,
}

impl RunOutcome {
    /// False when a gating criterion failed.
    pub fn passed(&self) -> bool {
        self.report.criteria.iter().all(|c| c.passed || !c.gating)
    }
}

pub(crate) fn fit_json(fit: Option<LineFit>) -> Value {
    match fit {
        Some(f) => {
            let (lo, hi) = f.slope_ci();
            json!({ "slope": f.slope, "intercept": f.intercept, "slope_se": f.slope_se, "ci95": [lo, hi] })
        }
        None => Value::Null,
    }
}

fn per_delta_seed(seed: u64, delta: f64) -> u64 {
    derive_seed(seed, delta.to_bits())
}

/// Parse-free entry point: config, model, artifacts, suite, report.
pub fn run(cli: &Cli) -> CliResult<RunOutcome> {
    let command = &cli.command;
    let config = command.run_args().load_config()?;
    config.validate()?;
    let resolved = match command {
        Command::Verify { .. } if config.model.is_none() => None,
        _ => Some(config.resolve_model()?),
    };
    let hash = config.hash()?;
    let mut artifacts = Artifacts::create(&config.output_dir, &hash, config.seed, command.name())?;
    let config_text = format!("{}\n{}", artifacts.stamp(), config.to_toml_string()?);
    artifacts.write_text("config.toml", &config_text)?;
    let mut report = Report::new(command.name(), &hash, config.seed, resolved.as_ref().map(|m| m.name.clone()));
    let mut timings = Timings::default();
    let mut console = Vec::new();
    let start = Instant::now();
    let ctx = Ctx { config: &config, artifacts: &mut artifacts, report: &mut report, console: &mut console };
    match command {
        Command::Norm { delta, y, .. } => norm(ctx, resolved.as_ref().unwrap(), *delta, y.as_deref())?,
        Command::Simulate(_) => simulate(ctx, resolved.as_ref().unwrap())?,
        Command::Decompose(_) => decompose(ctx, resolved.as_ref().unwrap())?,
        Command::Support(_) => support(ctx, resolved.as_ref().unwrap())?,
        Command::Covariance(_) => covariance(ctx, resolved.as_ref().unwrap())?,
        Command::Density(_) => density(ctx, resolved.as_ref().unwrap())?,
        Command::Verify { criteria, .. } => {
            let ids = verify::select(criteria.as_deref())?;
            let ran = verify::run_criteria(&ids, config.seed, |outcome, elapsed| {
                timings.record(format!("criterion {}", outcome.id), elapsed);
                ctx.console.push(outcome.line());
            })?;
            let rows: Vec<Vec<String>> = ran
                .iter()
                .map(|c| {
                    vec![
                        c.id.clone(),
                        c.passed.to_string(),
                        c.gating.to_string(),
                        num(c.measured),
                        c.expected.clone(),
                        num(c.margin),
                    ]
                })
                .collect();
            ctx.artifacts
                .write_csv("verify.csv", &["criterion", "passed", "gating", "measured", "expected", "margin"], &rows)?;
            ctx.report.criteria = ran;
        }
    }
    timings.record(command.name(), start.elapsed());
    artifacts.write_text("timings.txt", &timings.render())?;
    // the report lists itself among the artifacts
    report.artifacts = artifacts.files().iter().cloned().chain(["report.json".to_string()]).collect();
    let json = report.to_json()?;
    artifacts.write_text("report.json", &json)?;
    console.push(format!("report: {}", artifacts.dir().join("report.json").display()));
    Ok(RunOutcome { report, console })
}

struct Ctx<'a> {
    config: &'a ExperimentConfig,
    artifacts: &'a mut Artifacts,
    report: &'a mut Report,
    console: &'a mut Vec<String>,
}

fn norm(ctx: Ctx<'_>, m: &ResolvedModel, delta: Option<f64>, y: Option<&[f64]>) -> CliResult<()> {
    let deltas = match delta {
        Some(d) if d > 0.0 && d.is_finite() => vec![d],
        Some(d) => return Err(CliError::Usage(format!("--delta {d} must be positive"))),
        None => ctx.config.delta_grid.clone(),
    };
    let n = m.model.dim();
    let y = match y {
        Some(y) if y.len() != n => {
            return Err(CliError::Usage(format!("--y has {} entries, the model dimension is {n}", y.len())))
        }
        Some(y) => Some(DVector::from_column_slice(y)),
        None => None,
    };
    let a = directional_matrix(&m.model, 0.0, &m.x0)?;
    let span = dim_span_sigma(&m.model, 0.0, &m.x0)?;
    let mut rows = Vec::new();
    let mut table = Vec::new();
    for &delta in &deltas {
        let scaled = scale_matrix(&a, delta)?;
        let det_alpha = AlphaFactor::new(&scaled)?.det();
        let recenter = recentering_norm(&m.model, &m.x0, delta)?;
        let norm_y = y.as_ref().map(|y| aniso_norm(&scaled, y)).transpose()?;
        if let Some(v) = norm_y {
            ctx.console.push(format!("delta={} norm={}", num(delta), num(v)));
        }
        rows.push(vec![
            num(delta),
            num(hoermander_lambda(&a)),
            num(scaled.lambda_min()),
            num(scaled.lambda_max()),
            num(det_alpha),
            span.to_string(),
            num(recenter),
            norm_y.map(num).unwrap_or_default(),
        ]);
        table.push(json!({
            "delta": delta,
            "sv_min_scaled": scaled.lambda_min(),
            "sv_max_scaled": scaled.lambda_max(),
            "det_alpha": det_alpha,
            "recentering_norm": recenter,
            "norm_y": norm_y,
        }));
    }
    ctx.artifacts.write_csv(
        "norm.csv",
        &[
            "delta",
            "lambda",
            "sv_min_scaled",
            "sv_max_scaled",
            "det_alpha",
            "dim_span_sigma",
            "recentering_norm",
            "norm_y",
        ],
        &rows,
    )?;
    ctx.report.results.insert(
        "norm".into(),
        json!({
            "lambda": hoermander_lambda(&a),
            "lambda_max": a.lambda_max(),
            "dim_span_sigma": span,
            "y": y.map(|y| y.as_slice().to_vec()),
            "rows": table,
        }),
    );
    Ok(())
}

fn simulate(ctx: Ctx<'_>, m: &ResolvedModel) -> CliResult<()> {
    let c = ctx.config;
    let n = m.model.dim();
    let mut header: Vec<String> = vec!["delta".into(), "path".into()];
    header.extend((1..=n).map(|i| format!("f{i}")));
    header.extend((1..=n).map(|i| format!("x{i}")));
    let mut rows = Vec::new();
    let mut summary = Vec::new();
    for &delta in &c.delta_grid {
        let s = sample_scaled_endpoints(
            &m.model,
            &m.x0,
            delta,
            c.n_paths,
            c.steps_per_sub,
            per_delta_seed(c.seed, delta),
            c.centering,
        )?;
        for k in 0..s.len() {
            let f = DVector::from_column_slice(s.row(k));
            let x = &s.center + s.alpha.apply(&f);
            let mut row = vec![num(delta), k.to_string()];
            row.extend(f.iter().map(|v| num(*v)));
            row.extend(x.iter().map(|v| num(*v)));
            rows.push(row);
        }
        let cov = s.covariance();
        summary.push(json!({
            "delta": delta,
            "n": s.len(),
            "failed": s.failed,
            "mean": s.mean(),
            "variance": (0..n).map(|i| cov[i * n + i]).collect::<Vec<_>>(),
            "det_alpha": s.alpha.det(),
        }));
    }
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    ctx.artifacts.write_csv("simulate.csv", &header, &rows)?;
    ctx.report.results.insert("simulate".into(), json!({ "centering": c.centering, "rows": summary }));
    Ok(())
}

/// RMS and max of `‖Z_δ − V − AΔ − η‖` over `n_paths` paths.
fn key_residuals(m: &ResolvedModel, c: &ExperimentConfig, delta: f64, steps: usize) -> CliResult<(f64, f64)> {
    let conventions = Conventions { v: c.v_convention, ..Default::default() };
    let d = m.model.noise_dim();
    let seed = per_delta_seed(c.seed, delta);
    let norms: Vec<f64> = (0..c.n_paths)
        .into_par_iter()
        .map(|idx| {
            let path = BrownianGrid::sample(seed, idx, d, delta, steps)?;
            Ok(taylor_principal(&m.model, &m.x0, &path, conventions)?.residual_key.norm())
        })
        .collect::<hypodens_core::Result<_>>()?;
    let ss: f64 = hypodens_core::stats::sum(norms.iter().map(|v| v * v));
    Ok(((ss / norms.len() as f64).sqrt(), norms.iter().copied().fold(0.0, f64::max)))
}

fn decompose(ctx: Ctx<'_>, m: &ResolvedModel) -> CliResult<()> {
    let c = ctx.config;
    let mut rows = Vec::new();
    let mut refinement = Vec::new();
    for &delta in &c.delta_grid {
        let coarse = key_residuals(m, c, delta, c.steps_per_sub)?;
        let fine = key_residuals(m, c, delta, 4 * c.steps_per_sub)?;
        for (steps, (rms, max)) in [(c.steps_per_sub, coarse), (4 * c.steps_per_sub, fine)] {
            rows.push(vec![m.name.clone(), num(delta), steps.to_string(), num(rms), num(max)]);
        }
        refinement.push(json!({
            "delta": delta,
            "rms_coarse": coarse.0,
            "rms_fine": fine.0,
            "ratio": coarse.0 / fine.0,
        }));
    }
    ctx.artifacts.write_csv(
        "decomposition_residuals.csv",
        &["model", "delta", "steps", "rms_residual", "max_residual"],
        &rows,
    )?;
    let rem = remainder_scaling(&m.model, &m.x0, c.seed, &c.delta_grid, c.n_paths, c.steps_per_sub)?;
    let rem_rows: Vec<Vec<String>> =
        rem.rows.iter().map(|r| vec![num(r.delta), r.n_paths.to_string(), num(r.rms)]).collect();
    ctx.artifacts.write_csv("remainder.csv", &["delta", "n_paths", "rms_remainder"], &rem_rows)?;
    let plot: Vec<(f64, f64)> =
        rem.rows.iter().filter(|r| r.rms > 0.0).map(|r| (r.delta.ln(), r.rms.ln())).collect();
    ctx.artifacts.write_plot("remainder.dat", ["ln_delta", "ln_rms_remainder"], &plot)?;
    ctx.report.results.insert(
        "decompose".into(),
        json!({
            "v_convention": c.v_convention,
            "refinement": refinement,
            "remainder": rem.rows,
            "remainder_slope": fit_json(rem.slope),
        }),
    );
    Ok(())
}

fn frequency_rows(event: &str, table: &FrequencyTable, rows: &mut Vec<Vec<String>>) {
    for r in &table.rows {
        rows.push(vec![
            event.to_string(),
            num(r.epsilon),
            r.n.to_string(),
            r.hits.to_string(),
            num(r.p_hat),
            num(r.ci_lo),
            num(r.ci_hi),
        ]);
    }
}

fn support(ctx: Ctx<'_>, m: &ResolvedModel) -> CliResult<()> {
    let c = ctx.config;
    let d = m.model.noise_dim();
    if d < 2 {
        return Err(CliError::Config(format!("model: support statistics need d ≥ 2, the model has d = {d}")));
    }
    let stats = support_statistics(&SupportConfig {
        d,
        eps_grid: c.eps_grid.clone(),
        rho: c.rho,
        n_samples: c.n_paths,
        seed: c.seed,
        steps: c.steps_per_sub,
        include_lambda: true,
        qp_convention: c.qp_convention,
    })?;
    let mut rows = Vec::new();
    frequency_rows("upsilon", &stats.upsilon, &mut rows);
    let lambda = stats.lambda.expect("requested");
    frequency_rows("lambda", &lambda, &mut rows);
    ctx.artifacts.write_csv("support.csv", &["event", "epsilon", "n", "hits", "p_hat", "ci_lo", "ci_hi"], &rows)?;
    let plot: Vec<(f64, f64)> = stats
        .upsilon
        .rows
        .iter()
        .filter(|r| !r.censored())
        .map(|r| (r.epsilon.ln(), r.p_hat.ln()))
        .collect();
    ctx.artifacts.write_plot("support_upsilon.dat", ["ln_eps", "ln_p_hat"], &plot)?;
    ctx.report.results.insert(
        "support".into(),
        json!({
            "d": d,
            "rho": c.rho,
            "qp_convention": c.qp_convention,
            "upsilon": { "rows": stats.upsilon.rows, "slope": fit_json(stats.upsilon.slope) },
            "lambda": { "rows": lambda.rows, "slope": fit_json(lambda.slope) },
        }),
    );
    Ok(())
}

fn covariance(ctx: Ctx<'_>, m: &ResolvedModel) -> CliResult<()> {
    let c = ctx.config;
    let mut rows = Vec::new();
    let mut table = Vec::new();
    for &delta in &c.delta_grid {
        let l = lambda_star_samples(&m.model, &m.x0, delta, c.n_paths, c.steps_per_sub, per_delta_seed(c.seed, delta))?;
        let min = l.iter().copied().fold(f64::INFINITY, f64::min);
        let (q05, med, q95) = (quantile(&l, 0.05), quantile(&l, 0.5), quantile(&l, 0.95));
        rows.push(vec![num(delta), l.len().to_string(), num(min), num(q05), num(med), num(q95)]);
        table.push(json!({ "delta": delta, "min": min, "q05": q05, "median": med, "q95": q95 }));
    }
    ctx.artifacts.write_csv("covariance.csv", &["delta", "n_paths", "min", "q05", "median", "q95"], &rows)?;
    ctx.report.results.insert("covariance".into(), json!({ "rows": table }));
    Ok(())
}

fn mesh_rows(points: &[MeshPoint]) -> Vec<Vec<String>> {
    points
        .iter()
        .map(|p| vec![num(p.delta), p.mesh_id.to_string(), num(p.norm), num(p.p_hat), num(p.normalized_stat)])
        .collect()
}

/// Slopes of the diagonal series with the bandwidth halved and doubled.
pub(crate) fn bandwidth_slopes<M: VectorFieldModel + ?Sized>(
    series: &[DensityEstimate],
    model: &M,
    x0: &[f64],
) -> CliResult<Value> {
    let mut out = serde_json::Map::new();
    for (label, factor) in [("half", 0.5), ("double", 2.0)] {
        let rescaled = series.iter().map(|e| e.rescaled(factor)).collect::<hypodens_core::Result<Vec<_>>>()?;
        let slope = diagonal_exponent_of(&rescaled, model, x0)?.slope.map(|f| f.slope);
        out.insert(label.into(), json!(slope));
    }
    Ok(Value::Object(out))
}

fn density(ctx: Ctx<'_>, m: &ResolvedModel) -> CliResult<()> {
    let c = ctx.config;
    if c.delta_grid.len() < 4 {
        return Err(CliError::Config(format!(
            "delta_grid: the density suite needs at least 4 values, got {}",
            c.delta_grid.len()
        )));
    }
    if c.n_paths < 1000 {
        return Err(CliError::Config(format!("n_paths: the density suite needs at least 1000, got {}", c.n_paths)));
    }
    let protocol = DensityProtocol {
        delta_grid: c.delta_grid.clone(),
        n_paths: c.n_paths,
        steps_per_sub: c.steps_per_sub,
        seed: c.seed,
        centering: c.centering,
        bandwidth_scale: 1.0,
    };
    let series = estimate_series(&m.model, &m.x0, &protocol)?;
    let diag = diagonal_exponent_of(&series, &m.model, &m.x0)?;
    let rows: Vec<Vec<String>> =
        diag.rows.iter().map(|r| vec![num(r.delta), num(r.p_hat), r.censored.to_string()]).collect();
    ctx.artifacts.write_csv("density_diagonal.csv", &["delta", "p_hat", "censored"], &rows)?;
    let plot: Vec<(f64, f64)> =
        diag.rows.iter().filter(|r| !r.censored).map(|r| (r.delta.ln(), r.p_hat.ln())).collect();
    ctx.artifacts.write_plot("density_diagonal.dat", ["ln_delta", "ln_p_hat"], &plot)?;

    let lower = lower_bound_of(&series, &m.model, &m.x0, c.r, c.centering)?;
    let tail = tail_of(&series, &m.model, &m.x0, c.p_exponent)?;
    let header = ["delta", "mesh_id", "norm_A_delta", "p_hat", "normalized_stat"];
    ctx.artifacts.write_csv("density_lower.csv", &header, &mesh_rows(&lower.points))?;
    ctx.artifacts.write_csv("density_tail.csv", &header, &mesh_rows(&tail.points))?;
    let lower_rows: Vec<Value> = lower
        .rows
        .iter()
        .map(|r| json!({ "delta": r.delta, "min_normalized": r.min_normalized, "center_normalized": r.center_normalized }))
        .collect();
    ctx.report.results.insert(
        "density".into(),
        json!({
            "centering": c.centering,
            "diagonal": {
                "rows": diag.rows,
                "slope": fit_json(diag.slope),
                "expected_slope": diag.expected_slope,
                "bandwidth_slopes": bandwidth_slopes(&series, &m.model, &m.x0)?,
            },
            "lower": { "r": lower.r, "rows": lower_rows, "reference": lower.reference, "min_ratio": lower.min_ratio },
            "tail": {
                "p": tail.p,
                "rows": tail.rows,
                "variation": tail.variation,
                "max_recentering_ratio": tail.max_recentering_ratio,
            },
        }),
    );
    Ok(())
}
