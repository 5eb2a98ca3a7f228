use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::DecompositionBundle;
use crate::error::{Error, Result};
use crate::fields::{col_index, GammaExtension};
use crate::paths::mollifier;
use crate::rng::path_rng;
use crate::stats::NeumaierSum;

/// Cap on `h_η` when the quadratic part vanishes.
pub const DEFAULT_MAX_INVERSE_RADIUS: f64 = 1e6;
/// Stop rule of the fixed-point iteration.
pub const FP_TOL: f64 = 1e-12;
pub const MAX_FP_ITERATIONS: usize = 200;

/// Quadratic map `η(θ)^j = Σ_i L_{ji} θ_i + ½ θᵀ H^j θ` from `R^m` to
/// `R^{out}`.
#[derive(Debug, Clone, PartialEq)]
pub struct EtaMap {
    linear: DMatrix<f64>,
    hess: Vec<DMatrix<f64>>,
    max_inverse_radius: f64,
}

impl EtaMap {
    /// `linear` is `out × m`; `hess` holds `out` symmetric `m × m` matrices.
    pub fn new(linear: DMatrix<f64>, hess: Vec<DMatrix<f64>>) -> Result<Self> {
        let m = linear.ncols();
        if hess.len() != linear.nrows() || hess.iter().any(|h| h.shape() != (m, m)) {
            return Err(Error::Argument("η coefficient shapes are inconsistent".into()));
        }
        if hess.iter().any(|h| (h - h.transpose()).amax() > 1e-12 * (1.0 + h.amax())) {
            return Err(Error::Argument("second-derivative matrices must be symmetric".into()));
        }
        let all = linear.iter().chain(hess.iter().flat_map(|h| h.iter()));
        if all.clone().any(|v| !v.is_finite()) {
            return Err(Error::Argument("η coefficients must be finite".into()));
        }
        Ok(Self { linear, hess, max_inverse_radius: DEFAULT_MAX_INVERSE_RADIUS })
    }

    pub fn zero(m: usize) -> Self {
        Self::new(DMatrix::zeros(m, m), vec![DMatrix::zeros(m, m); m]).expect("consistent shapes")
    }

    /// `η(θ) = (q/2)θ²` on `R`.
    pub fn quadratic_1d(q: f64) -> Self {
        Self::new(DMatrix::zeros(1, 1), vec![DMatrix::from_element(1, 1, q)]).expect("consistent shapes")
    }

    /// Random square map: `L` with spectral norm `linear_norm` (or zero),
    /// symmetric `H^j` with entries uniform in `[-quad_scale, quad_scale]`.
    pub fn random<R: Rng + ?Sized>(m: usize, linear_norm: f64, quad_scale: f64, rng: &mut R) -> Self {
        let mut linear = DMatrix::from_fn(m, m, |_, _| rng.random_range(-1.0f64..=1.0));
        let spectral = linear.clone().singular_values().max().max(f64::MIN_POSITIVE);
        linear *= linear_norm / spectral;
        let hess = (0..m)
            .map(|_| {
                let h = DMatrix::from_fn(m, m, |_, _| rng.random_range(-quad_scale..=quad_scale));
                (&h + h.transpose()) * 0.5
            })
            .collect();
        Self::new(linear, hess).expect("consistent shapes")
    }

    pub fn with_max_inverse_radius(mut self, cap: f64) -> Self {
        self.max_inverse_radius = cap;
        self
    }

    /// Input dimension.
    pub fn m(&self) -> usize {
        self.linear.ncols()
    }

    pub fn out_dim(&self) -> usize {
        self.linear.nrows()
    }

    pub fn linear(&self) -> &DMatrix<f64> {
        &self.linear
    }

    pub fn hessians(&self) -> &[DMatrix<f64>] {
        &self.hess
    }

    pub fn max_inverse_radius(&self) -> f64 {
        self.max_inverse_radius
    }

    pub fn eval(&self, theta: &DVector<f64>) -> DVector<f64> {
        let mut out = &self.linear * theta;
        for (o, h) in out.iter_mut().zip(&self.hess) {
            *o += 0.5 * theta.dot(&(h * theta));
        }
        out
    }

    /// `∇η(θ)`, `out × m`.
    pub fn jacobian(&self, theta: &DVector<f64>) -> DMatrix<f64> {
        let mut j = self.linear.clone();
        for (r, h) in self.hess.iter().enumerate() {
            let grad = h * theta;
            for (c, g) in grad.iter().enumerate() {
                j[(r, c)] += g;
            }
        }
        j
    }

    /// `T ∘ η` for a linear map `T` of size `k × out`.
    pub fn compose_linear(&self, t: &DMatrix<f64>) -> Result<Self> {
        if t.ncols() != self.out_dim() {
            return Err(Error::Argument("linear map does not match η".into()));
        }
        let m = self.m();
        let hess = (0..t.nrows())
            .map(|r| {
                let mut acc = DMatrix::zeros(m, m);
                for (a, h) in self.hess.iter().enumerate() {
                    acc += h * t[(r, a)];
                }
                acc
            })
            .collect();
        Ok(Self { linear: t * &self.linear, hess, max_inverse_radius: self.max_inverse_radius })
    }

    /// `η_ω` on `R^m → R^n`: for each block `p`, with `l(p)` the diagonal
    /// column, the linear part `√δ ε_p Θ_{l(p)}` and the quadratic parts
    /// `(δ/2) a_{p,p} Θ_{l(p)}²` and `δ a_{p,q} Θ_{l(q)} Θ_{l(p)}` for `q > p`.
    pub fn eta_omega(bundle: &DecompositionBundle) -> Result<Self> {
        let (d, delta) = (bundle.d, bundle.delta);
        let n = bundle.z_delta.len();
        let m = d * d;
        let mut linear = DMatrix::zeros(n, m);
        let mut hess = vec![DMatrix::zeros(m, m); n];
        for p in 0..d {
            let lp = col_index(d, p, p);
            linear.set_column(lp, &(&bundle.eps_p[p] * delta.sqrt()));
            for (a, h) in hess.iter_mut().enumerate() {
                h[(lp, lp)] = delta * bundle.a_ij(p, p)[a];
                for q in p + 1..d {
                    let lq = col_index(d, q, q);
                    h[(lp, lq)] = delta * bundle.a_ij(p, q)[a];
                    h[(lq, lp)] = h[(lp, lq)];
                }
            }
        }
        Self::new(linear, hess)
    }

    /// `η̃_ω = Γ⁻¹ J_0 η_ω`, a square map on `R^m`.
    pub fn tilde_eta_omega(bundle: &DecompositionBundle, gamma: &GammaExtension) -> Result<Self> {
        let raw = Self::eta_omega(bundle)?;
        let (n, m) = (gamma.n(), gamma.m());
        let mut t = DMatrix::zeros(m, n);
        for a in 0..n {
            let mut e = DVector::zeros(n);
            e[a] = 1.0;
            t.set_column(a, &gamma.solve(&gamma.embed_zero(&e)));
        }
        raw.compose_linear(&t)
    }

    fn require_square(&self) -> Result<()> {
        if self.out_dim() != self.m() {
            return Err(Error::Argument("η must map R^m to itself".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EtaConstants {
    /// `max_{i,k} |∂²_{ik} η|`, Euclidean norm over components.
    pub c2: f64,
    /// Always zero for a quadratic map.
    pub c3: f64,
    /// `sup_{|x| ≤ 2h} max_{i,j} |∂_i η^j(x)|`.
    pub c_star: f64,
    /// `1/(16m²(c2 + √c3))`, capped.
    pub h_eta: f64,
}

/// Closed-form constants for a quadratic map: the second derivatives are
/// constant and each `∂_i η^j` is affine, so its sup over the ball
/// `|x| ≤ 2h` is `|L_{ji}| + 2h·|H^j_{i,·}|`.
pub fn eta_constants(eta: &EtaMap, h: f64) -> Result<EtaConstants> {
    eta.require_square()?;
    if !(h >= 0.0 && h.is_finite()) {
        return Err(Error::Argument(format!("h must be non-negative, got {h}")));
    }
    let m = eta.m();
    let mut c2: f64 = 0.0;
    for i in 0..m {
        for k in 0..m {
            c2 = c2.max(eta.hess.iter().map(|hj| hj[(i, k)].powi(2)).sum::<f64>().sqrt());
        }
    }
    let c3: f64 = 0.0;
    let mut c_star: f64 = 0.0;
    for (j, hj) in eta.hess.iter().enumerate() {
        for i in 0..m {
            c_star = c_star.max(eta.linear[(j, i)].abs() + 2.0 * h * hj.row(i).norm());
        }
    }
    let denom = 16.0 * (m * m) as f64 * (c2 + c3.sqrt());
    let h_eta = if denom > 0.0 { (1.0 / denom).min(eta.max_inverse_radius) } else { eta.max_inverse_radius };
    Ok(EtaConstants { c2, c3, c_star, h_eta })
}

#[derive(Debug, Clone, PartialEq)]
pub struct InverseSolution {
    pub theta: DVector<f64>,
    /// Updates that moved the iterate by more than the tolerance.
    pub iterations: usize,
}

/// `Φ⁻¹(y)` for `Φ(θ) = θ + η(θ)` by the Banach iteration
/// `θ_{k+1} = (Id + ∇η(0))⁻¹ (y − ½ H[θ_k, θ_k])` started at zero.
pub fn local_inverse(eta: &EtaMap, y: &DVector<f64>) -> Result<InverseSolution> {
    eta.require_square()?;
    let m = eta.m();
    if y.len() != m {
        return Err(Error::Argument(format!("y has length {}, expected {m}", y.len())));
    }
    let consts = eta_constants(eta, 0.0)?;
    let radius = 0.5 * consts.h_eta;
    if y.norm() > radius {
        return Err(Error::Domain { norm: y.norm(), radius });
    }
    let lin_norm = if m == 0 { 0.0 } else { eta.linear.clone().singular_values().max() };
    if lin_norm > 0.5 {
        return Err(Error::Argument(format!("‖∇η(0)‖ = {lin_norm} exceeds 1/2")));
    }
    let lu = (DMatrix::identity(m, m) + &eta.linear).lu();
    let mut theta = DVector::zeros(m);
    let mut iterations = 0;
    for _ in 0..MAX_FP_ITERATIONS {
        let mut rhs = y.clone();
        for (r, h) in rhs.iter_mut().zip(&eta.hess) {
            *r -= 0.5 * theta.dot(&(h * &theta));
        }
        let next = lu.solve(&rhs).ok_or(Error::Convergence { iterations })?;
        let step = (&next - &theta).norm();
        theta = next;
        if theta.norm() > 2.0 * consts.h_eta || !theta.iter().all(|v| v.is_finite()) {
            return Err(Error::Convergence { iterations });
        }
        if step <= FP_TOL {
            return Ok(InverseSolution { theta, iterations });
        }
        iterations += 1;
    }
    Err(Error::Convergence { iterations })
}

/// Which of the two sufficient conditions on `r` hold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HypothesisReport {
    pub c_star_16r: f64,
    /// `(1/(2m))√(λ̲/λ̄)`.
    pub c_star_limit: f64,
    pub h_eta: f64,
    pub r: f64,
    pub violations: Vec<String>,
}

impl HypothesisReport {
    pub fn holds(&self) -> bool {
        self.violations.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianBounds {
    pub lower: f64,
    pub upper: f64,
    pub hypotheses: HypothesisReport,
}

fn spd_extremes(q: &DMatrix<f64>) -> Result<(f64, f64)> {
    if !q.is_square() || (q - q.transpose()).amax() > 1e-12 * (1.0 + q.amax()) {
        return Err(Error::Argument("Q must be square and symmetric".into()));
    }
    let ev = SymmetricEigen::new(q.clone()).eigenvalues;
    let (lo, hi) = (ev.min(), ev.max());
    if !(lo > 0.0) {
        return Err(Error::Argument(format!("Q is not positive definite (smallest eigenvalue {lo})")));
    }
    Ok((lo, hi))
}

/// Two-sided bound on the localized density of `G = Θ + η(Θ)`,
/// `Θ ~ N(0, Q)`, at `z ∈ B(0, r)`:
///
/// `(8π)^{-m/2} det Q^{-1/2} e^{-8|z|²/λ̲} ≤ p ≤ 2^{m/2} π^{-m/2} det Q^{-1/2} e^{-|z|²/(32λ̄)}`.
///
/// The conditions on `r` are reported, not enforced.
pub fn perturbed_gaussian_bounds(q: &DMatrix<f64>, eta: &EtaMap, r: f64, z: &DVector<f64>) -> Result<GaussianBounds> {
    eta.require_square()?;
    let m = eta.m();
    if q.nrows() != m || z.len() != m {
        return Err(Error::Argument("Q, η and z dimensions differ".into()));
    }
    if !(r > 0.0) {
        return Err(Error::Argument(format!("r must be positive, got {r}")));
    }
    if z.norm() > r {
        return Err(Error::Domain { norm: z.norm(), radius: r });
    }
    let (lo, hi) = spd_extremes(q)?;
    let consts = eta_constants(eta, 16.0 * r)?;
    let limit = (lo / hi).sqrt() / (2.0 * m as f64);
    let mut violations = Vec::new();
    if consts.c_star > limit {
        violations.push(format!("c_*(η, 16r) = {:.6e} > (1/(2m))√(λ̲/λ̄) = {limit:.6e}", consts.c_star));
    }
    if r > consts.h_eta {
        violations.push(format!("r = {r:.6e} > h_η = {:.6e}", consts.h_eta));
    }
    let mf = m as f64;
    let det_sqrt = q.determinant().sqrt();
    let z2 = z.norm_squared();
    let lower = (8.0 * std::f64::consts::PI).powf(-mf / 2.0) / det_sqrt * (-8.0 * z2 / lo).exp();
    let upper = 2f64.powf(mf / 2.0) * std::f64::consts::PI.powf(-mf / 2.0) / det_sqrt * (-z2 / (32.0 * hi)).exp();
    Ok(GaussianBounds {
        lower,
        upper,
        hypotheses: HypothesisReport { c_star_16r: consts.c_star, c_star_limit: limit, h_eta: consts.h_eta, r, violations },
    })
}

/// Box-histogram estimates of the localized densities of `G = Θ + η(Θ)`:
/// `p_wide` under `Π ψ_{16r}(Θ_i)` (the lower bound applies) and `p_narrow`
/// under `Π ψ_r(Θ_i)` (the upper bound applies). Both are normalized by the
/// sample count, not by the weight sum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramPoint {
    pub z: Vec<f64>,
    pub p_wide: f64,
    pub p_narrow: f64,
    pub hits: u64,
}

pub fn localized_histogram(
    q: &DMatrix<f64>,
    eta: &EtaMap,
    r: f64,
    points: &[DVector<f64>],
    half_width: f64,
    n_samples: u64,
    seed: u64,
) -> Result<Vec<HistogramPoint>> {
    eta.require_square()?;
    let m = eta.m();
    spd_extremes(q)?;
    if q.nrows() != m || points.iter().any(|z| z.len() != m) {
        return Err(Error::Argument("Q, η and evaluation points dimensions differ".into()));
    }
    if !(half_width > 0.0 && r > 0.0) || n_samples == 0 {
        return Err(Error::Argument("half_width, r and n_samples must be positive".into()));
    }
    let chol = Cholesky::new(q.clone()).ok_or_else(|| Error::Argument("Q is not positive definite".into()))?;
    let l = chol.l();
    const CHUNK: u64 = 4096;
    let n_chunks = n_samples.div_ceil(CHUNK);
    let np = points.len();
    let partial: Vec<(Vec<f64>, Vec<f64>, Vec<u64>)> = (0..n_chunks)
        .into_par_iter()
        .map(|c| -> Result<_> {
            let mut wide = vec![NeumaierSum::new(); np];
            let mut narrow = vec![NeumaierSum::new(); np];
            let mut hits = vec![0u64; np];
            for idx in c * CHUNK..((c + 1) * CHUNK).min(n_samples) {
                let mut rng = path_rng(seed, idx);
                let xi = DVector::from_fn(m, |_, _| rng.sample::<f64, _>(StandardNormal));
                let theta = &l * xi;
                let g = &theta + eta.eval(&theta);
                let mut u_wide = 1.0;
                let mut u_narrow = 1.0;
                for &t in theta.iter() {
                    u_wide *= mollifier(16.0 * r, t)?;
                    u_narrow *= mollifier(r, t)?;
                }
                for (k, z) in points.iter().enumerate() {
                    if (&g - z).amax() <= half_width {
                        wide[k].add(u_wide);
                        narrow[k].add(u_narrow);
                        hits[k] += 1;
                    }
                }
            }
            Ok((
                wide.iter().map(NeumaierSum::value).collect(),
                narrow.iter().map(NeumaierSum::value).collect(),
                hits,
            ))
        })
        .collect::<Result<_>>()?;
    let volume = (2.0 * half_width).powi(m as i32) * n_samples as f64;
    Ok((0..np)
        .map(|k| {
            let mut w = NeumaierSum::new();
            let mut s = NeumaierSum::new();
            let mut h = 0;
            for (pw, pn, ph) in &partial {
                w.add(pw[k]);
                s.add(pn[k]);
                h += ph[k];
            }
            HistogramPoint { z: points[k].iter().copied().collect(), p_wide: w.value() / volume, p_narrow: s.value() / volume, hits: h }
        })
        .collect())
}
