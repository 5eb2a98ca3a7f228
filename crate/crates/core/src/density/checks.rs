use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::{sample_scaled_endpoints, Centering, DensityEstimate, DENSITY_FLOOR};
use crate::error::{Error, Result};
use crate::fields::{aniso_norm, dim_span_sigma, directional_matrix, eval_drift, scale_matrix, VectorFieldModel};
use crate::rng::derive_seed;
use crate::stats::{fit_line, halton, log_log_fit, LineFit};

/// Sampling plan shared by the density checks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityProtocol {
    pub delta_grid: Vec<f64>,
    pub n_paths: u64,
    pub steps_per_sub: usize,
    pub seed: u64,
    pub centering: Centering,
    pub bandwidth_scale: f64,
}

impl Default for DensityProtocol {
    fn default() -> Self {
        Self {
            delta_grid: vec![0.02, 0.04, 0.08, 0.12, 0.2],
            n_paths: 200_000,
            steps_per_sub: 256,
            seed: 1,
            centering: Centering::X0PlusBDelta,
            bandwidth_scale: 1.0,
        }
    }
}

/// One KDE per `δ`. The sample seed depends on `δ` itself, so the same `δ`
/// gets the same paths whatever grid it sits in.
pub fn estimate_series<M: VectorFieldModel + ?Sized>(
    model: &M,
    x0: &[f64],
    protocol: &DensityProtocol,
) -> Result<Vec<DensityEstimate>> {
    if protocol.delta_grid.is_empty() {
        return Err(Error::Argument("delta grid is empty".into()));
    }
    protocol
        .delta_grid
        .iter()
        .map(|&delta| {
            let seed = derive_seed(protocol.seed, delta.to_bits());
            let s = sample_scaled_endpoints(
                model,
                x0,
                delta,
                protocol.n_paths,
                protocol.steps_per_sub,
                seed,
                protocol.centering,
            )?;
            DensityEstimate::new(s, protocol.bandwidth_scale)
        })
        .collect()
}

/// `n − dim⟨σ(0, x₀)⟩/2`.
pub fn expected_exponent<M: VectorFieldModel + ?Sized>(model: &M, x0: &[f64]) -> Result<f64> {
    Ok(model.dim() as f64 - dim_span_sigma(model, 0.0, x0)? as f64 / 2.0)
}

/// `|b(0, x₀)δ|_{A_δ(0, x₀)}`.
pub fn recentering_norm<M: VectorFieldModel + ?Sized>(model: &M, x0: &[f64], delta: f64) -> Result<f64> {
    let a = scale_matrix(&directional_matrix(model, 0.0, x0)?, delta)?;
    aniso_norm(&a, &(eval_drift(model, 0.0, x0)? * delta))
}

fn center_of<M: VectorFieldModel + ?Sized>(model: &M, x0: &[f64], delta: f64, c: Centering) -> Result<DVector<f64>> {
    let x0v = DVector::from_column_slice(x0);
    Ok(match c {
        Centering::X0 => x0v,
        Centering::X0PlusBDelta => x0v + eval_drift(model, 0.0, x0)? * delta,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiagonalRow {
    pub delta: f64,
    pub p_hat: f64,
    pub censored: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiagonalExponent {
    pub rows: Vec<DiagonalRow>,
    /// Slope of `ln p̂` against `ln δ` over uncensored rows.
    pub slope: Option<LineFit>,
    /// `−(n − dim⟨σ⟩/2)`.
    pub expected_slope: f64,
}

/// `p̂_{X_δ}(x₀ + b(0, x₀)δ)` across the series and its log–log slope.
pub fn diagonal_exponent_of<M: VectorFieldModel + ?Sized>(
    series: &[DensityEstimate],
    model: &M,
    x0: &[f64],
) -> Result<DiagonalExponent> {
    let mut rows = Vec::with_capacity(series.len());
    for est in series {
        let y = center_of(model, x0, est.delta(), Centering::X0PlusBDelta)?;
        let p_hat = est.evaluate_original(&y);
        rows.push(DiagonalRow { delta: est.delta(), p_hat, censored: !(p_hat > DENSITY_FLOOR) });
    }
    let kept: Vec<&DiagonalRow> = rows.iter().filter(|r| !r.censored).collect();
    let x: Vec<f64> = kept.iter().map(|r| r.delta).collect();
    let y: Vec<f64> = kept.iter().map(|r| r.p_hat).collect();
    Ok(DiagonalExponent { slope: log_log_fit(&x, &y), rows, expected_slope: -expected_exponent(model, x0)? })
}

pub fn diagonal_exponent<M: VectorFieldModel + ?Sized>(
    model: &M,
    x0: &[f64],
    protocol: &DensityProtocol,
) -> Result<DiagonalExponent> {
    if protocol.delta_grid.len() < 4 {
        return Err(Error::Argument("the diagonal exponent needs at least four δ values".into()));
    }
    diagonal_exponent_of(&estimate_series(model, x0, protocol)?, model, x0)
}

/// The centre followed by `count` quasi-random points of the ball of radius
/// `r` in `R^n`, from the Halton sequence on `[−1, 1]^n` by rejection.
pub fn ball_mesh(n: usize, r: f64, count: usize) -> Result<Vec<DVector<f64>>> {
    if !(r >= 0.0 && r.is_finite()) || n == 0 || n > 8 {
        return Err(Error::Argument(format!("ball mesh needs 1 ≤ n ≤ 8 and a finite radius r ≥ 0 (got n = {n}, r = {r})")));
    }
    let mut out = vec![DVector::zeros(n)];
    if r == 0.0 {
        return Ok(out);
    }
    let mut idx = 1;
    while out.len() < count + 1 {
        let u = DVector::from_iterator(n, halton(idx, n).into_iter().map(|v| 2.0 * v - 1.0));
        idx += 1;
        if u.norm() <= 1.0 {
            out.push(u * r);
        }
    }
    Ok(out)
}

/// `directions × radii` points: unit vectors from the Halton sequence (or
/// `±1` when `n = 1`) scaled by each radius; radius zero contributes one point.
pub fn tail_mesh(n: usize, radii: &[f64], directions: usize) -> Result<Vec<DVector<f64>>> {
    if n == 0 || n > 8 {
        return Err(Error::Argument("tail mesh needs 1 ≤ n ≤ 8".into()));
    }
    let dirs: Vec<DVector<f64>> = if n == 1 {
        vec![DVector::from_element(1, 1.0), DVector::from_element(1, -1.0)]
    } else {
        let mut dirs = Vec::with_capacity(directions);
        let mut idx = 1;
        while dirs.len() < directions {
            let u = DVector::from_iterator(n, halton(idx, n).into_iter().map(|v| 2.0 * v - 1.0));
            idx += 1;
            let norm = u.norm();
            if norm <= 1.0 && norm > 0.1 {
                dirs.push(u / norm);
            }
        }
        dirs
    };
    let mut out = Vec::new();
    for &r in radii {
        if r == 0.0 {
            out.push(DVector::zeros(n));
        } else {
            out.extend(dirs.iter().map(|d| d * r));
        }
    }
    Ok(out)
}

/// One evaluation point of a mesh.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeshPoint {
    pub delta: f64,
    pub mesh_id: usize,
    /// `|y − center|_{A_δ}`.
    pub norm: f64,
    pub p_hat: f64,
    pub normalized_stat: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LowerBoundRow {
    pub delta: f64,
    /// `min_y δ^e p̂_{X_δ}(y)` over the ball mesh.
    pub min_normalized: f64,
    /// `δ^e p̂_{X_δ}` at the ball centre.
    pub center_normalized: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LowerBoundReport {
    pub r: f64,
    pub ball_center: Centering,
    pub rows: Vec<LowerBoundRow>,
    /// Row minimum at the largest `δ`.
    pub reference: f64,
    /// `min_δ (row minimum) / reference`.
    pub min_ratio: f64,
    /// `normalized_stat = δ^e p̂`.
    pub points: Vec<MeshPoint>,
}

/// Minimum of `δ^{n − dim⟨σ⟩/2} p̂_{X_δ}(y)` over the mesh of
/// `{|y − center|_{A_δ} ≤ r}` for every estimate of the series.
pub fn lower_bound_of<M: VectorFieldModel + ?Sized>(
    series: &[DensityEstimate],
    model: &M,
    x0: &[f64],
    r: f64,
    ball_center: Centering,
) -> Result<LowerBoundReport> {
    if series.is_empty() {
        return Err(Error::Argument("empty density series".into()));
    }
    let e = expected_exponent(model, x0)?;
    let mesh = ball_mesh(model.dim(), r, 200)?;
    let mut rows = Vec::with_capacity(series.len());
    let mut points = Vec::new();
    for est in series {
        let delta = est.delta();
        let c = center_of(model, x0, delta, ball_center)?;
        let scale = delta.powf(e);
        let pts: Vec<Vec<f64>> = mesh
            .iter()
            .map(|z| est.to_scaled(&(&c + est.samples().alpha.apply(z))).iter().copied().collect())
            .collect();
        let vals = est.evaluate_many(&pts);
        let norm = |v: f64| scale * v / est.det_alpha();
        for (k, (z, &v)) in mesh.iter().zip(&vals).enumerate() {
            points.push(MeshPoint {
                delta,
                mesh_id: k,
                norm: z.norm(),
                p_hat: v / est.det_alpha(),
                normalized_stat: norm(v),
            });
        }
        rows.push(LowerBoundRow {
            delta,
            min_normalized: vals.iter().copied().map(norm).fold(f64::INFINITY, f64::min),
            center_normalized: norm(vals[0]),
        });
    }
    let reference = rows
        .iter()
        .max_by(|a, b| a.delta.total_cmp(&b.delta))
        .map(|r| r.min_normalized)
        .expect("non-empty");
    let min_ratio = rows.iter().map(|r| r.min_normalized / reference).fold(f64::INFINITY, f64::min);
    Ok(LowerBoundReport { r, ball_center, rows, reference, min_ratio, points })
}

pub fn lower_bound_check<M: VectorFieldModel + ?Sized>(
    model: &M,
    x0: &[f64],
    r: f64,
    protocol: &DensityProtocol,
) -> Result<LowerBoundReport> {
    ball_mesh(model.dim(), r, 1)?;
    lower_bound_of(&estimate_series(model, x0, protocol)?, model, x0, r, Centering::X0PlusBDelta)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TailRow {
    pub delta: f64,
    /// `sup δ^e p̂(y)(1 + |y − x₀|^p_{A_δ})`.
    pub sup_stat: f64,
    /// Same with `x₀ + b(0, x₀)δ` as centre.
    pub sup_stat_recentered: f64,
    /// `sup δ^e p̂(y) exp(|y − x₀|_{A_δ}/c)` with `c` fitted from the decay of
    /// `ln p̂` along the mesh.
    pub exp_stat: Option<f64>,
    pub exp_scale: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TailReport {
    pub p: f64,
    pub rows: Vec<TailRow>,
    /// `max / min` of `sup_stat` across `δ`.
    pub variation: f64,
    /// Largest of `max(a/b, b/a)` between the two centrings.
    pub max_recentering_ratio: f64,
    /// Centre `x₀`; `normalized_stat = δ^e p̂ (1 + |y − x₀|^p_{A_δ})`.
    pub points: Vec<MeshPoint>,
}

/// Radii of the tail mesh in scaled units.
pub const TAIL_RADII: [f64; 7] = [0.0, 0.5, 1.0, 1.5, 2.0, 2.5, 3.0];

pub fn tail_of<M: VectorFieldModel + ?Sized>(
    series: &[DensityEstimate],
    model: &M,
    x0: &[f64],
    p: f64,
) -> Result<TailReport> {
    if !(p >= 2.0) {
        return Err(Error::Argument(format!("tail exponent p must be at least 2, got {p}")));
    }
    if series.is_empty() {
        return Err(Error::Argument("empty density series".into()));
    }
    let e = expected_exponent(model, x0)?;
    let mesh = tail_mesh(model.dim(), &TAIL_RADII, 64)?;
    let mut rows = Vec::with_capacity(series.len());
    let mut points = Vec::new();
    for est in series {
        let delta = est.delta();
        let scale = delta.powf(e) / est.det_alpha();
        let stat = |center: Centering| -> Result<(f64, Vec<(f64, f64)>)> {
            let c = center_of(model, x0, delta, center)?;
            let pts: Vec<Vec<f64>> = mesh
                .iter()
                .map(|z| est.to_scaled(&(&c + est.samples().alpha.apply(z))).iter().copied().collect())
                .collect();
            let vals = est.evaluate_many(&pts);
            let pairs: Vec<(f64, f64)> = mesh.iter().zip(&vals).map(|(z, v)| (z.norm(), scale * v)).collect();
            let sup = pairs.iter().map(|(r, v)| v * (1.0 + r.powf(p))).fold(0.0, f64::max);
            Ok((sup, pairs))
        };
        let (sup_stat, pairs) = stat(Centering::X0)?;
        let (sup_stat_recentered, _) = stat(Centering::X0PlusBDelta)?;
        for (k, &(r, v)) in pairs.iter().enumerate() {
            points.push(MeshPoint {
                delta,
                mesh_id: k,
                norm: r,
                p_hat: v / delta.powf(e),
                normalized_stat: v * (1.0 + r.powf(p)),
            });
        }
        let kept: Vec<&(f64, f64)> = pairs.iter().filter(|(_, v)| *v > DENSITY_FLOOR).collect();
        let xs: Vec<f64> = kept.iter().map(|(r, _)| *r).collect();
        let ys: Vec<f64> = kept.iter().map(|(_, v)| v.ln()).collect();
        let exp_scale = fit_line(&xs, &ys).filter(|f| f.slope < 0.0).map(|f| -1.0 / f.slope);
        let exp_stat = exp_scale.map(|c| pairs.iter().map(|(r, v)| v * (r / c).exp()).fold(0.0, f64::max));
        rows.push(TailRow { delta, sup_stat, sup_stat_recentered, exp_stat, exp_scale });
    }
    let hi = rows.iter().map(|r| r.sup_stat).fold(0.0, f64::max);
    let lo = rows.iter().map(|r| r.sup_stat).fold(f64::INFINITY, f64::min);
    let max_recentering_ratio = rows
        .iter()
        .map(|r| (r.sup_stat / r.sup_stat_recentered).max(r.sup_stat_recentered / r.sup_stat))
        .fold(1.0, f64::max);
    Ok(TailReport { p, rows, variation: hi / lo, max_recentering_ratio, points })
}

pub fn tail_check<M: VectorFieldModel + ?Sized>(
    model: &M,
    x0: &[f64],
    p: f64,
    protocol: &DensityProtocol,
) -> Result<TailReport> {
    if !(p >= 2.0) {
        return Err(Error::Argument(format!("tail exponent p must be at least 2, got {p}")));
    }
    tail_of(&estimate_series(model, x0, protocol)?, model, x0, p)
}
