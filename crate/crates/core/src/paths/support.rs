use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::covariance::{conditional_covariance, ConditionalCovariance};
use super::grid::BrownianGrid;
use crate::error::{Error, Result};

/// Reference time of the cross-integral terms in `q_p`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum QpConvention {
    /// `∫ (B^j − B^j_{s_p}) dB^i` over block `p`, anchored at the block start.
    #[default]
    PBlock,
    /// `∫ (B^j − B^j_{s_i}) dB^i`, anchored at the start of block `i`.
    IBlock,
}

/// Per-block support functionals of the rescaled path.
#[derive(Debug, Clone, PartialEq)]
pub struct SupportQuantities {
    /// `q_p(B)`.
    pub q_p: Vec<f64>,
    /// `q(B) = Σ_p q_p(B)`.
    pub q: f64,
    /// `max_t Σ_{j≠p} |B_t^j − B^j_{s_p}|` over the grid points of block `p`.
    pub sup_terms: Vec<f64>,
}

pub fn support_quantities(path: &BrownianGrid, convention: QpConvention) -> SupportQuantities {
    let d = path.d();
    let mut q_p = Vec::with_capacity(d);
    let mut sup_terms = Vec::with_capacity(d);
    for p in 0..d {
        let (s, e) = (path.sub_start(p), path.sub_start(p + 1));
        let mut q = (0..d).filter(|&j| j != p).map(|j| (path.b(e, j) - path.b(s, j)).abs()).sum::<f64>();

        let sqrt_delta = path.delta().sqrt();
        for i in (0..d).filter(|&i| i != p) {
            for j in (0..d).filter(|&j| j != p && j != i) {
                let anchor = match convention {
                    QpConvention::PBlock => path.b(s, j),
                    QpConvention::IBlock => path.b(path.sub_start(i), j),
                };
                let integral: f64 =
                    (s..e).map(|k| (path.b(k, j) - anchor) * path.dw(k, i) / sqrt_delta).sum();
                q += integral.abs();
            }
        }
        q_p.push(q);

        let sup = (s..=e)
            .map(|k| (0..d).filter(|&j| j != p).map(|j| (path.b(k, j) - path.b(s, j)).abs()).sum::<f64>())
            .fold(0.0, f64::max);
        sup_terms.push(sup);
    }
    let q = q_p.iter().sum();
    SupportQuantities { q_p, q, sup_terms }
}

/// `ψ_a(x)`: one on `|x| ≤ a`, `exp(1 − a²/(a² − (|x| − a)²))` on `a < |x| < 2a`,
/// zero beyond.
pub fn mollifier(a: f64, x: f64) -> Result<f64> {
    if !(a > 0.0) {
        return Err(Error::Argument(format!("mollifier radius must be positive, got {a}")));
    }
    Ok(psi(a, x))
}

#[inline]
pub(crate) fn psi(a: f64, x: f64) -> f64 {
    let ax = x.abs();
    if ax <= a {
        1.0
    } else if ax < 2.0 * a {
        let u = ax - a;
        (1.0 - a * a / (a * a - u * u)).exp()
    } else {
        0.0
    }
}

/// Mollified localization weights and the indicator of `Λ_{ρ,ε}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalizationWeights {
    /// `ψ_{ε^{-dρ}}(1/det Q) · ψ_{ε^{-2ρ}}(|Q|_l) · ψ_{dε}(q(B))`.
    pub u_tilde: f64,
    /// `Π_l ψ_r(Θ_l)` over all `m` entries of `Θ`.
    pub u_bar: f64,
    pub in_lambda: bool,
}

/// Weights from precomputed covariance and support functionals.
pub fn localization_from_parts(
    cov: &ConditionalCovariance,
    support: &SupportQuantities,
    theta: &DVector<f64>,
    eps: f64,
    rho: f64,
    r: f64,
) -> Result<LocalizationWeights> {
    if !(eps > 0.0 && rho > 0.0 && r > 0.0) {
        return Err(Error::Argument(format!("eps, rho and r must be positive (got {eps}, {rho}, {r})")));
    }
    let d = cov.d() as f64;
    let det = cov.det();
    let inv_det = if det > 0.0 { 1.0 / det } else { f64::INFINITY };
    let u_tilde = psi(eps.powf(-d * rho), inv_det)
        * psi(eps.powf(-2.0 * rho), cov.frobenius_scaled())
        * psi(d * eps, support.q);
    let u_bar = theta.iter().map(|&t| psi(r, t)).product();

    let det_floor = eps.powf(rho);
    let sup_cap = eps.powf(-rho);
    let in_lambda = cov
        .det_blocks()
        .iter()
        .zip(&support.sup_terms)
        .zip(&support.q_p)
        .all(|((&dq, &sup), &q)| dq >= det_floor && sup <= sup_cap && q <= eps);
    Ok(LocalizationWeights { u_tilde, u_bar, in_lambda })
}

pub fn localization_weights(
    path: &BrownianGrid,
    theta: &DVector<f64>,
    eps: f64,
    rho: f64,
    r: f64,
    convention: QpConvention,
) -> Result<LocalizationWeights> {
    let cov = conditional_covariance(path);
    let support = support_quantities(path, convention);
    localization_from_parts(&cov, &support, theta, eps, rho, r)
}
