//! Monte Carlo densities of `X_δ` in the scaled coordinates
//! `F = α⁻¹(X_δ − center)` and the small-time checks built on them.

mod checks;

use std::sync::Arc;

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use checks::{
    ball_mesh, diagonal_exponent, diagonal_exponent_of, estimate_series, expected_exponent, lower_bound_check,
    lower_bound_of, recentering_norm, MeshPoint, TAIL_RADII, tail_check, tail_mesh, tail_of, DensityProtocol, DiagonalExponent,
    DiagonalRow, LowerBoundReport, LowerBoundRow, TailReport, TailRow,
};

use crate::error::{Error, Result};
use crate::fields::{directional_matrix, eval_drift, scale_matrix, AlphaFactor, VectorFieldModel};
use crate::rng::path_rng;
use crate::sde::integrate_endpoint;
use crate::stats::NeumaierSum;

/// Blown-up paths tolerated before a sample set is rejected.
pub const MAX_FAILURE_FRACTION: f64 = 1e-3;

/// KDE values below this are treated as censored.
pub const DENSITY_FLOOR: f64 = 10.0 * f64::EPSILON;

/// Point the scaled coordinates are centred on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Centering {
    #[serde(rename = "x0")]
    X0,
    #[default]
    #[serde(rename = "x0+bdelta")]
    X0PlusBDelta,
}

impl std::str::FromStr for Centering {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "x0" => Ok(Self::X0),
            "x0+bdelta" => Ok(Self::X0PlusBDelta),
            other => Err(Error::Argument(format!("unknown centering `{other}` (expected x0 or x0+bdelta)"))),
        }
    }
}

impl std::fmt::Display for Centering {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::X0 => "x0",
            Self::X0PlusBDelta => "x0+bdelta",
        })
    }
}

/// Scaled endpoints `F = α⁻¹(X_δ − center)` with the factor `α` of `A_δ(0, x₀)`.
#[derive(Debug, Clone)]
pub struct ScaledSamples {
    pub delta: f64,
    pub centering: Centering,
    pub center: DVector<f64>,
    pub alpha: AlphaFactor,
    /// `N × n`, row-major.
    pub values: Arc<Vec<f64>>,
    pub n: usize,
    pub failed: usize,
}

impl ScaledSamples {
    pub fn len(&self) -> usize {
        self.values.len() / self.n
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn row(&self, k: usize) -> &[f64] {
        &self.values[k * self.n..(k + 1) * self.n]
    }

    pub fn mean(&self) -> Vec<f64> {
        (0..self.n)
            .map(|c| {
                let mut acc = NeumaierSum::new();
                (0..self.len()).for_each(|k| acc.add(self.row(k)[c]));
                acc.value() / self.len() as f64
            })
            .collect()
    }

    /// Sample covariance, `n × n` row-major.
    pub fn covariance(&self) -> Vec<f64> {
        let mu = self.mean();
        let n = self.n;
        let mut out = vec![0.0; n * n];
        for a in 0..n {
            for b in a..n {
                let mut acc = NeumaierSum::new();
                (0..self.len()).for_each(|k| {
                    let r = self.row(k);
                    acc.add((r[a] - mu[a]) * (r[b] - mu[b]));
                });
                out[a * n + b] = acc.value() / (self.len() - 1) as f64;
                out[b * n + a] = out[a * n + b];
            }
        }
        out
    }
}

/// Draw `n_paths` endpoints on streams `0..n_paths` of `seed` and scale them.
/// Blown-up paths are dropped, up to [`MAX_FAILURE_FRACTION`].
pub fn sample_scaled_endpoints<M: VectorFieldModel + ?Sized>(
    model: &M,
    x0: &[f64],
    delta: f64,
    n_paths: u64,
    steps_per_sub: usize,
    seed: u64,
    centering: Centering,
) -> Result<ScaledSamples> {
    let a_delta = scale_matrix(&directional_matrix(model, 0.0, x0)?, delta)?;
    let alpha = AlphaFactor::new(&a_delta)?;
    if n_paths == 0 {
        return Err(Error::Argument("n_paths must be positive".into()));
    }
    let x0v = DVector::from_column_slice(x0);
    let center = match centering {
        Centering::X0 => x0v.clone(),
        Centering::X0PlusBDelta => &x0v + eval_drift(model, 0.0, x0)? * delta,
    };
    let ends: Vec<Result<Vec<f64>>> = (0..n_paths)
        .into_par_iter()
        .map(|idx| integrate_endpoint(model, x0, &mut path_rng(seed, idx), delta, steps_per_sub))
        .collect();
    let n = model.dim();
    let mut values = Vec::with_capacity(ends.len() * n);
    let mut failed = 0;
    for e in ends {
        match e {
            Ok(x) => values.extend(alpha.apply_inverse(&(DVector::from_vec(x) - &center)).iter()),
            Err(Error::BlowUp { .. }) => failed += 1,
            Err(other) => return Err(other),
        }
    }
    if failed as f64 > MAX_FAILURE_FRACTION * n_paths as f64 {
        return Err(Error::DataQuality { failed, total: n_paths as usize });
    }
    Ok(ScaledSamples { delta, centering, center, alpha, values: Arc::new(values), n, failed })
}

/// Product-Gaussian kernel estimate over scaled samples, with per-coordinate
/// bandwidth `scale · N^{-1/(n+4)} · std`.
#[derive(Debug, Clone)]
pub struct DensityEstimate {
    samples: ScaledSamples,
    bandwidth: Vec<f64>,
}

impl DensityEstimate {
    pub fn new(samples: ScaledSamples, bandwidth_scale: f64) -> Result<Self> {
        if samples.len() < 2 || !(bandwidth_scale > 0.0) {
            return Err(Error::Argument("KDE needs at least two samples and a positive bandwidth scale".into()));
        }
        let cov = samples.covariance();
        let n = samples.n;
        let factor = (samples.len() as f64).powf(-1.0 / (n as f64 + 4.0));
        let bandwidth: Vec<f64> = (0..n).map(|c| bandwidth_scale * factor * cov[c * n + c].sqrt()).collect();
        if bandwidth.iter().any(|h| !(*h > 0.0)) {
            return Err(Error::Argument("a scaled coordinate has zero spread".into()));
        }
        Ok(Self { samples, bandwidth })
    }

    /// Same samples, bandwidth multiplied by `factor`.
    pub fn rescaled(&self, factor: f64) -> Result<Self> {
        if !(factor > 0.0) {
            return Err(Error::Argument("bandwidth factor must be positive".into()));
        }
        Ok(Self { samples: self.samples.clone(), bandwidth: self.bandwidth.iter().map(|h| h * factor).collect() })
    }

    pub fn samples(&self) -> &ScaledSamples {
        &self.samples
    }

    pub fn bandwidth(&self) -> &[f64] {
        &self.bandwidth
    }

    pub fn det_alpha(&self) -> f64 {
        self.samples.alpha.det()
    }

    pub fn delta(&self) -> f64 {
        self.samples.delta
    }

    /// `p̂_F(z)`.
    pub fn evaluate(&self, z: &[f64]) -> f64 {
        let n = self.samples.n;
        let norm: f64 = self.bandwidth.iter().map(|h| h * (2.0 * std::f64::consts::PI).sqrt()).product();
        let inv: Vec<f64> = self.bandwidth.iter().map(|h| 1.0 / h).collect();
        let mut acc = NeumaierSum::new();
        for row in self.samples.values.chunks_exact(n) {
            let mut q = 0.0;
            for c in 0..n {
                let u = (z[c] - row[c]) * inv[c];
                q += u * u;
                if q > 80.0 {
                    break;
                }
            }
            if q <= 80.0 {
                acc.add((-0.5 * q).exp());
            }
        }
        acc.value() / (self.samples.len() as f64 * norm)
    }

    /// `p̂_F` at many points, in parallel; results in input order.
    pub fn evaluate_many(&self, points: &[Vec<f64>]) -> Vec<f64> {
        points.par_iter().map(|z| self.evaluate(z)).collect()
    }

    /// `α⁻¹(y − center)`.
    pub fn to_scaled(&self, y: &DVector<f64>) -> DVector<f64> {
        self.samples.alpha.apply_inverse(&(y - &self.samples.center))
    }

    /// `p̂_{X_δ}(y) = p̂_F(α⁻¹(y − center)) / det α`.
    pub fn evaluate_original(&self, y: &DVector<f64>) -> f64 {
        self.evaluate(self.to_scaled(y).as_slice()) / self.det_alpha()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::{builtin_model, FnModel};

    #[test]
    fn elliptic_scaled_endpoints_are_standard() {
        let m = builtin_model("elliptic").unwrap();
        let s = sample_scaled_endpoints(&m, &[0.0, 0.0], 0.1, 20_000, 8, 3, Centering::X0).unwrap();
        let cov = s.covariance();
        let se = (2.0 / 20_000f64).sqrt();
        assert!((cov[0] - 1.0).abs() < 3.0 * se && (cov[3] - 1.0).abs() < 3.0 * se);
        assert!(cov[1].abs() < 3.0 / (20_000f64).sqrt());
    }

    #[test]
    fn drift_centering_is_an_exact_shift() {
        let m = FnModel::new(2, 2, |j, _, _, o| { o.fill(0.0); o[j] = 1.0 }, |_, _, o| o.copy_from_slice(&[1.0, -0.5]));
        let a = sample_scaled_endpoints(&m, &[0.0, 0.0], 0.2, 500, 8, 1, Centering::X0).unwrap();
        let b = sample_scaled_endpoints(&m, &[0.0, 0.0], 0.2, 500, 8, 1, Centering::X0PlusBDelta).unwrap();
        let shift = a.alpha.apply_inverse(&DVector::from_vec(vec![0.2, -0.1]));
        for k in 0..500 {
            for c in 0..2 {
                assert!((a.row(k)[c] - b.row(k)[c] - shift[c]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn change_of_variables_is_exact() {
        let m = builtin_model("heisenberg").unwrap();
        let s = sample_scaled_endpoints(&m, &[0.0; 3], 0.05, 2_000, 8, 2, Centering::X0).unwrap();
        let kde = DensityEstimate::new(s, 1.0).unwrap();
        let z = DVector::from_vec(vec![0.3, -0.2, 0.1]);
        let y = DVector::from_vec(vec![0.0; 3]) + kde.samples().alpha.apply(&z);
        let lhs = kde.evaluate_original(&y) * kde.det_alpha();
        assert!((lhs - kde.evaluate(z.as_slice())).abs() < 1e-12 * lhs);
    }

    #[test]
    fn degenerate_point_is_rejected() {
        let m = FnModel::new(2, 1, |_, _, _, o| o.copy_from_slice(&[1.0, 0.0]), |_, _, o| o.fill(0.0));
        let e = sample_scaled_endpoints(&m, &[0.0, 0.0], 0.1, 10, 8, 1, Centering::X0);
        assert!(matches!(e, Err(Error::Degenerate { .. })));
    }

    #[test]
    fn centering_round_trips_as_text() {
        for c in [Centering::X0, Centering::X0PlusBDelta] {
            assert_eq!(c.to_string().parse::<Centering>().unwrap(), c);
        }
    }
}
