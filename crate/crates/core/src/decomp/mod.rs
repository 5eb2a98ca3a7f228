//! Second-order stochastic Taylor expansion of `X_δ` around `x₀` and its
//! split `Z_δ = V + A(0, x₀)Δ + η`, the remainder `R_δ`, the transform to
//! `Θ` coordinates, and local inversion of `θ ↦ θ + η(θ)` with the resulting
//! perturbed-Gaussian density bounds.

mod inversion;

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use inversion::{
    eta_constants, local_inverse, localized_histogram, perturbed_gaussian_bounds, EtaConstants, EtaMap,
    GaussianBounds, HistogramPoint, HypothesisReport, InverseSolution, DEFAULT_MAX_INVERSE_RADIUS, FP_TOL,
    MAX_FP_ITERATIONS,
};

use crate::error::{Error, Result};
use crate::fields::{
    directional_matrix, eval_drift, eval_sigma, eval_sigma_jacobian, scale_matrix, DirectionalMatrix,
    GammaExtension, VectorFieldModel,
};
use crate::paths::{delta_vector, theta_vector, BrownianGrid};
use crate::rng::path_rng;
use crate::sde::integrate;
use crate::stats::{log_log_fit, LineFit, NeumaierSum};

/// Coefficient in front of `Σ_{i≠p} Δ_p^i` inside `V`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VConvention {
    /// `Σ_{i≠p} a_i Δ_p^i`.
    #[default]
    #[serde(rename = "appendix-b")]
    Weighted,
    /// `(Σ_{i≠p} Δ_p^i)·(1, …, 1)`, the coefficient-free reading.
    #[serde(rename = "decomp2")]
    Bare,
}

/// Which blocks `l` enter the `a_{j,p}` sum of `ε_p`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EpsConvention {
    /// `l < p`.
    #[default]
    LowerBlocks,
    /// `l > p`.
    UpperBlocks,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Conventions {
    pub v: VConvention,
    pub eps: EpsConvention,
}

/// Every term of the key decomposition for one path.
#[derive(Debug, Clone, PartialEq)]
pub struct DecompositionBundle {
    pub d: usize,
    pub delta: f64,
    /// `a_i = σ_i(0, x₀)`.
    pub a_i: Vec<DVector<f64>>,
    /// `a_{ij} = ∂_{σ_i}σ_j(0, x₀)` at `i * d + j`.
    pub a_ij: Vec<DVector<f64>>,
    pub z_delta: DVector<f64>,
    pub v_term: DVector<f64>,
    pub eps_p: Vec<DVector<f64>>,
    pub eta_p: Vec<DVector<f64>>,
    pub eta: DVector<f64>,
    pub delta_vec: DVector<f64>,
    pub theta: DVector<f64>,
    /// `Z_δ − V − A(0, x₀)Δ − η`.
    pub residual_key: DVector<f64>,
    /// `X_δ − x₀ − Z_δ − b(0, x₀)δ`, when attached.
    pub r_delta: Option<DVector<f64>>,
}

impl DecompositionBundle {
    #[inline]
    pub fn a_ij(&self, i: usize, j: usize) -> &DVector<f64> {
        &self.a_ij[i * self.d + j]
    }

    /// Integrate the SDE along `path` and store `R_δ`.
    pub fn attach_remainder<M: VectorFieldModel + ?Sized>(
        &mut self,
        model: &M,
        x0: &[f64],
        path: &BrownianGrid,
    ) -> Result<()> {
        let sol = integrate(model, x0, path)?;
        let b = eval_drift(model, 0.0, x0)?;
        let x_end = DVector::from_column_slice(sol.endpoint());
        self.r_delta = Some(x_end - DVector::from_column_slice(x0) - &self.z_delta - b * self.delta);
        Ok(())
    }
}

/// Taylor coefficients `a_i`, `a_{ij}` at `(0, x₀)`.
pub fn taylor_coefficients<M: VectorFieldModel + ?Sized>(
    model: &M,
    x0: &[f64],
) -> Result<(Vec<DVector<f64>>, Vec<DVector<f64>>)> {
    let d = model.noise_dim();
    let a_i = (0..d).map(|i| eval_sigma(model, i, 0.0, x0)).collect::<Result<Vec<_>>>()?;
    let jac = (0..d).map(|j| eval_sigma_jacobian(model, j, 0.0, x0)).collect::<Result<Vec<_>>>()?;
    let mut a_ij = Vec::with_capacity(d * d);
    for i in 0..d {
        for j in 0..d {
            a_ij.push(&jac[j] * &a_i[i]);
        }
    }
    Ok((a_i, a_ij))
}

/// Evaluate `Z_δ`, `V`, `ε_p`, `η_p`, `Δ`, `Θ` and the key residual on one
/// path. The remainder is left empty; see
/// [`DecompositionBundle::attach_remainder`].
pub fn taylor_principal<M: VectorFieldModel + ?Sized>(
    model: &M,
    x0: &[f64],
    path: &BrownianGrid,
    conventions: Conventions,
) -> Result<DecompositionBundle> {
    let (d, n) = (model.noise_dim(), model.dim());
    if path.d() != d || x0.len() != n {
        return Err(Error::Argument("path or x0 does not match the model".into()));
    }
    let delta = path.delta();
    let (a_i, a_ij) = taylor_coefficients(model, x0)?;
    let a = |i: usize, j: usize| &a_ij[i * d + j];
    let inc = path.increments_and_iterated();
    let dl = |l: usize, i: usize| inc.delta(l, i);

    let mut z_delta = DVector::zeros(n);
    let w_end = path.endpoint();
    let full = path.full_iterated();
    for i in 0..d {
        z_delta.axpy(w_end[i], &a_i[i], 1.0);
        for j in 0..d {
            z_delta.axpy(full[i * d + j], a(i, j), 1.0);
        }
    }

    let mut v_term = DVector::zeros(n);
    for p in 0..d {
        for i in (0..d).filter(|&i| i != p) {
            match conventions.v {
                VConvention::Weighted => v_term.axpy(dl(p, i), &a_i[i], 1.0),
                VConvention::Bare => v_term.add_scalar_mut(dl(p, i)),
            }
            v_term.axpy(0.5 * dl(p, i) * dl(p, i), a(i, i), 1.0);
            for j in (0..d).filter(|&j| j != p && j != i) {
                v_term.axpy(inc.iterated(p, i, j), a(i, j), 1.0);
            }
            for l in p + 1..d {
                for j in (0..d).filter(|&j| j != l) {
                    v_term.axpy(dl(p, i) * dl(l, j), a(i, j), 1.0);
                }
            }
        }
    }

    let mut eps_p = Vec::with_capacity(d);
    for p in 0..d {
        let mut e = DVector::zeros(n);
        for l in p + 1..d {
            for j in (0..d).filter(|&j| j != l) {
                e.axpy(dl(l, j), a(p, j), 1.0);
            }
        }
        let others: Vec<usize> = match conventions.eps {
            EpsConvention::LowerBlocks => (0..p).collect(),
            EpsConvention::UpperBlocks => (p + 1..d).collect(),
        };
        for l in others {
            for j in (0..d).filter(|&j| j != l) {
                e.axpy(dl(l, j), a(j, p), 1.0);
            }
        }
        for j in (0..d).filter(|&j| j != p) {
            e.axpy(dl(p, j), a(p, j), 1.0);
        }
        eps_p.push(e);
    }

    let mut eta_p = Vec::with_capacity(d);
    let mut eta = DVector::zeros(n);
    for p in 0..d {
        let dp = dl(p, p);
        let mut e = a(p, p) * (0.5 * dp * dp);
        for l in p + 1..d {
            e.axpy(dl(l, l) * dp, a(p, l), 1.0);
        }
        e.axpy(dp, &eps_p[p], 1.0);
        eta += &e;
        eta_p.push(e);
    }

    let delta_vec = delta_vector(&inc);
    let theta = theta_vector(&inc, delta);
    let a0 = directional_matrix(model, 0.0, x0)?;
    let residual_key = &z_delta - &v_term - a0.entries() * &delta_vec - &eta;
    Ok(DecompositionBundle {
        d,
        delta,
        a_i,
        a_ij,
        z_delta,
        v_term,
        eps_p,
        eta_p,
        eta,
        delta_vec,
        theta,
        residual_key,
        r_delta: None,
    })
}

/// `‖Z_δ − V − AΔ − η‖` with `A` supplied by the caller.
pub fn verify_key_decomposition(bundle: &DecompositionBundle, a: &DirectionalMatrix) -> Result<f64> {
    if a.n() != bundle.z_delta.len() || a.m() != bundle.delta_vec.len() {
        return Err(Error::Argument("directional matrix does not match the bundle".into()));
    }
    Ok((&bundle.z_delta - &bundle.v_term - a.entries() * &bundle.delta_vec - &bundle.eta).norm())
}

/// Residual envelope `C·√h·δ`, where `h = 1/(d·N)` is the fine step on the
/// unit horizon.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KeyEnvelope {
    pub c: f64,
}

impl KeyEnvelope {
    pub fn unit_step(d: usize, steps_per_sub: usize) -> f64 {
        1.0 / (d * steps_per_sub) as f64
    }

    /// Smallest `C` covering every calibration residual `(residual, h, δ)`.
    pub fn fit(samples: &[(f64, f64, f64)]) -> Self {
        let c = samples.iter().map(|&(r, h, delta)| r / (h.sqrt() * delta)).fold(0.0, f64::max);
        Self { c }
    }

    pub fn bound(&self, h: f64, delta: f64) -> f64 {
        self.c * h.sqrt() * delta
    }

    /// Errors when `residual` exceeds ten times the envelope, the signature
    /// of a coefficient-convention mismatch.
    pub fn check(&self, residual: f64, h: f64, delta: f64) -> Result<()> {
        let envelope = self.bound(h, delta);
        if residual > 10.0 * envelope {
            return Err(Error::Decomposition { residual, envelope });
        }
        Ok(())
    }
}

/// `|J_0(V)|_Γ`, `Z̃`, `Ṽ`, `η̃(Θ)`, `G` and the transformed residual.
#[derive(Debug, Clone, PartialEq)]
pub struct TildeQuantities {
    pub z_tilde: DVector<f64>,
    pub v_tilde: DVector<f64>,
    pub eta_tilde: DVector<f64>,
    pub g: DVector<f64>,
    /// `Z̃ − Ṽ − G`.
    pub residual: DVector<f64>,
}

/// `Γ_δ` built from `A(0, x₀)` scaled by the bundle's `δ`.
pub fn gamma_for<M: VectorFieldModel + ?Sized>(model: &M, x0: &[f64], delta: f64) -> Result<GammaExtension> {
    GammaExtension::new(&scale_matrix(&directional_matrix(model, 0.0, x0)?, delta)?)
}

/// `Z̃ = Γ⁻¹J_Θ(Z_δ)`, `Ṽ = Γ⁻¹J_0(V)`, `η̃ = Γ⁻¹J_0(η)` and `G = Θ + η̃`.
pub fn tilde_transform(gamma: &GammaExtension, bundle: &DecompositionBundle) -> Result<TildeQuantities> {
    if gamma.n() != bundle.z_delta.len() || gamma.m() != bundle.theta.len() {
        return Err(Error::Argument("Γ does not match the bundle".into()));
    }
    let z_tilde = gamma.solve(&gamma.embed(&bundle.z_delta, &bundle.theta));
    let v_tilde = gamma.solve(&gamma.embed_zero(&bundle.v_term));
    let eta_tilde = gamma.solve(&gamma.embed_zero(&bundle.eta));
    let g = &bundle.theta + &eta_tilde;
    let residual = &z_tilde - &v_tilde - &g;
    Ok(TildeQuantities { z_tilde, v_tilde, eta_tilde, g, residual })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RemainderRow {
    pub delta: f64,
    pub n_paths: u64,
    pub rms: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RemainderTable {
    pub rows: Vec<RemainderRow>,
    /// Log–log slope of RMS against `δ`, over rows with positive RMS.
    pub slope: Option<LineFit>,
}

/// RMS of `R_δ = X_δ − x₀ − Z_δ − b(0, x₀)δ` per `δ`, by subtraction.
pub fn remainder_scaling<M: VectorFieldModel + ?Sized>(
    model: &M,
    x0: &[f64],
    seed: u64,
    delta_grid: &[f64],
    n_paths: u64,
    steps_per_sub: usize,
) -> Result<RemainderTable> {
    if delta_grid.is_empty() || n_paths == 0 {
        return Err(Error::Argument("empty delta grid or zero paths".into()));
    }
    let (a_i, a_ij) = taylor_coefficients(model, x0)?;
    let b = eval_drift(model, 0.0, x0)?;
    let d = model.noise_dim();
    let x0v = DVector::from_column_slice(x0);
    let mut rows = Vec::with_capacity(delta_grid.len());
    for (g, &delta) in delta_grid.iter().enumerate() {
        let sq: Vec<f64> = (0..n_paths)
            .into_par_iter()
            .map(|idx| -> Result<f64> {
                let mut rng = path_rng(crate::rng::derive_seed(seed, g as u64), idx);
                let path = BrownianGrid::sample_with(&mut rng, d, delta, steps_per_sub)?;
                let sol = integrate(model, x0, &path)?;
                let full = path.full_iterated();
                let w = path.endpoint();
                let mut r = DVector::from_column_slice(sol.endpoint()) - &x0v - &b * delta;
                for i in 0..d {
                    r.axpy(-w[i], &a_i[i], 1.0);
                    for j in 0..d {
                        r.axpy(-full[i * d + j], &a_ij[i * d + j], 1.0);
                    }
                }
                Ok(r.norm_squared())
            })
            .collect::<Result<_>>()?;
        let mut acc = NeumaierSum::new();
        sq.iter().for_each(|&v| acc.add(v));
        rows.push(RemainderRow { delta, n_paths, rms: (acc.value() / n_paths as f64).sqrt() });
    }
    let kept: Vec<&RemainderRow> = rows.iter().filter(|r| r.rms > 0.0).collect();
    let x: Vec<f64> = kept.iter().map(|r| r.delta).collect();
    let y: Vec<f64> = kept.iter().map(|r| r.rms).collect();
    Ok(RemainderTable { slope: log_log_fit(&x, &y), rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::{builtin_model, FnModel, PolynomialModel};
    use crate::paths::sample_path;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn heisenberg_second_order_coefficients() {
        let m = builtin_model("heisenberg").unwrap();
        let (_, a) = taylor_coefficients(&m, &[0.0; 3]).unwrap();
        assert_eq!(a[1].as_slice(), &[0.0, 0.0, 0.5]);
        assert_eq!(a[2].as_slice(), &[0.0, 0.0, -0.5]);
        assert!(a[0].iter().chain(a[3].iter()).all(|&v| v == 0.0));
    }

    #[test]
    fn d1_collapse() {
        // σ(x) = 1 + x on R: a₁ = 1, a₁₁ = 1
        let m = FnModel::new(1, 1, |_, _, x, o| o[0] = 1.0 + x[0], |_, _, o| o[0] = 0.0);
        let path = sample_path(3, 1, 0.2, 32).unwrap();
        let b = taylor_principal(&m, &[0.0], &path, Conventions::default()).unwrap();
        let w = path.endpoint()[0];
        assert_eq!(b.v_term[0], 0.0);
        assert_eq!(b.eps_p[0][0], 0.0);
        assert!((b.eta[0] - 0.5 * w * w * b.a_ij(0, 0)[0]).abs() < 1e-12);
        assert!((b.z_delta[0] - (w + 0.5 * w * w)).abs() < 1e-12);
        assert!(b.residual_key.amax() < 1e-12);
    }

    #[test]
    fn constant_fields_have_exact_residual() {
        let m = FnModel::new(3, 2, |j, _, _, o| o.copy_from_slice(if j == 0 { &[1.0, 0.3, 0.0] } else { &[0.0, 1.0, -2.0] }), |_, _, o| o.fill(0.0));
        let path = sample_path(8, 2, 0.1, 32).unwrap();
        let b = taylor_principal(&m, &[0.0; 3], &path, Conventions::default()).unwrap();
        assert_eq!(b.eta.amax(), 0.0);
        assert!(b.residual_key.amax() < 1e-12);
    }

    #[test]
    fn residual_shrinks_with_refinement_and_flags_bite() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let m = PolynomialModel::random_affine(3, 2, 1.0, &mut rng);
        let rms = |steps: usize, conv: Conventions| {
            let mut acc = 0.0;
            for s in 0..200 {
                let path = BrownianGrid::sample(11, s, 2, 0.05, steps).unwrap();
                acc += taylor_principal(&m, &[0.1, -0.2, 0.3], &path, conv).unwrap().residual_key.norm_squared();
            }
            (acc / 200.0).sqrt()
        };
        let coarse = rms(64, Conventions::default());
        let fine = rms(1024, Conventions::default());
        assert!((coarse / fine - 4.0).abs() < 0.8, "ratio {}", coarse / fine);
        let bare = rms(1024, Conventions { v: VConvention::Bare, ..Default::default() });
        let upper = rms(1024, Conventions { eps: EpsConvention::UpperBlocks, ..Default::default() });
        assert!(bare > 20.0 * fine && upper > 20.0 * fine);
    }

    #[test]
    fn tilde_identity_matches_key_residual() {
        let m = builtin_model("heisenberg-drift").unwrap();
        let x0 = [0.2, -0.1, 0.4];
        let path = sample_path(2, 2, 0.08, 64).unwrap();
        let b = taylor_principal(&m, &x0, &path, Conventions::default()).unwrap();
        let gamma = gamma_for(&m, &x0, 0.08).unwrap();
        let t = tilde_transform(&gamma, &b).unwrap();
        let key_norm = gamma.factor().norm(&b.residual_key);
        assert!((t.residual.norm() - key_norm).abs() < 1e-10 * (1.0 + key_norm));
    }

    #[test]
    fn eta_map_at_theta_reproduces_eta() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let m = PolynomialModel::random_affine(4, 3, 1.0, &mut rng);
        let path = sample_path(5, 3, 0.07, 16).unwrap();
        let b = taylor_principal(&m, &[0.0; 4], &path, Conventions::default()).unwrap();
        let map = EtaMap::eta_omega(&b).unwrap();
        assert!((map.eval(&b.theta) - &b.eta).amax() < 1e-13);
    }

    #[test]
    fn heisenberg_remainder_vanishes() {
        let m = builtin_model("heisenberg").unwrap();
        let table = remainder_scaling(&m, &[0.0; 3], 1, &[0.05, 0.1], 50, 16).unwrap();
        assert!(table.rows.iter().all(|r| r.rms < 1e-14));
        let mut b = taylor_principal(&m, &[0.0; 3], &sample_path(1, 2, 0.1, 16).unwrap(), Conventions::default()).unwrap();
        b.attach_remainder(&m, &[0.0; 3], &sample_path(1, 2, 0.1, 16).unwrap()).unwrap();
        assert!(b.r_delta.unwrap().amax() < 1e-14);
    }
}
