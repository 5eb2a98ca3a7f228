use nalgebra::{DMatrix, DVector};

use super::SdeSolution;
use crate::error::{Error, Result};
use crate::fields::{
    bracket_jacobian, eval_drift, eval_drift_jacobian, eval_sigma, eval_sigma_jacobian, lie_bracket, VectorFieldModel,
};
use crate::paths::BrownianGrid;

/// A field built from the model: `σ_j` or `[σ_j, σ_l]` (0-based).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NamedField {
    Sigma(usize),
    Bracket(usize, usize),
}

impl NamedField {
    fn required_order(self) -> usize {
        match self {
            NamedField::Sigma(_) => 1,
            NamedField::Bracket(..) => 2,
        }
    }

    fn value<M: VectorFieldModel + ?Sized>(self, model: &M, t: f64, x: &[f64]) -> Result<DVector<f64>> {
        match self {
            NamedField::Sigma(j) => eval_sigma(model, j, t, x),
            NamedField::Bracket(j, l) => lie_bracket(model, j, l, t, x),
        }
    }

    fn jacobian<M: VectorFieldModel + ?Sized>(self, model: &M, t: f64, x: &[f64]) -> Result<DMatrix<f64>> {
        match self {
            NamedField::Sigma(j) => eval_sigma_jacobian(model, j, t, x),
            NamedField::Bracket(j, l) => bracket_jacobian(model, j, l, t, x),
        }
    }

    fn time_derivative<M: VectorFieldModel + ?Sized>(self, model: &M, t: f64, x: &[f64]) -> Result<DVector<f64>> {
        match self {
            NamedField::Sigma(j) => {
                let mut out = vec![0.0; model.dim()];
                model.sigma_time_derivative(j, t, x, &mut out);
                Ok(DVector::from_vec(out))
            }
            NamedField::Bracket(..) => {
                let h = model.fd_step();
                Ok((self.value(model, t + h, x)? - self.value(model, t - h, x)?) / (2.0 * h))
            }
        }
    }
}

/// `[σ_k, φ] = ∇φ σ_k − ∇σ_k φ`.
fn bracket_with<M: VectorFieldModel + ?Sized>(model: &M, k: usize, phi: NamedField, t: f64, x: &[f64]) -> Result<DVector<f64>> {
    let sk = eval_sigma(model, k, t, x)?;
    let jk = eval_sigma_jacobian(model, k, t, x)?;
    Ok(phi.jacobian(model, t, x)? * sk - jk * phi.value(model, t, x)?)
}

/// `[σ_k, [σ_k, φ]]`, with the Jacobian of the inner bracket by central
/// differences of its exact value.
fn double_bracket<M: VectorFieldModel + ?Sized>(model: &M, k: usize, phi: NamedField, t: f64, x: &[f64]) -> Result<DVector<f64>> {
    let n = model.dim();
    let h = model.fd_step();
    let inner = bracket_with(model, k, phi, t, x)?;
    let mut grad = DMatrix::zeros(n, n);
    let mut xp = x.to_vec();
    for c in 0..n {
        xp[c] = x[c] + h;
        let plus = bracket_with(model, k, phi, t, &xp)?;
        xp[c] = x[c] - h;
        let minus = bracket_with(model, k, phi, t, &xp)?;
        xp[c] = x[c];
        grad.set_column(c, &((plus - minus) / (2.0 * h)));
    }
    let sk = eval_sigma(model, k, t, x)?;
    let jk = eval_sigma_jacobian(model, k, t, x)?;
    Ok(grad * sk - jk * inner)
}

/// Sup-norm over the grid of the gap between `Z_t φ(t, X_t)` and
///
/// `φ(0, x₀) + ∫ Z Σ_k [σ_k, φ] dW^k + ∫ Z ([b, φ] + ½ Σ_k [σ_k, [σ_k, φ]] + ∂_t φ) ds`
///
/// with left-point (Itô) sums on the fine grid.
pub fn ito_representation_check<M: VectorFieldModel + ?Sized>(
    model: &M,
    sol: &SdeSolution,
    path: &BrownianGrid,
    phi: NamedField,
) -> Result<f64> {
    if model.derivative_order() < phi.required_order() {
        return Err(Error::Capability(format!(
            "{phi:?} needs closed-form derivatives of order {}, model provides {}",
            phi.required_order(),
            model.derivative_order()
        )));
    }
    if !sol.has_flows() {
        return Err(Error::Argument("the representation check needs the tangent flows".into()));
    }
    if sol.len() != path.n_steps() + 1 {
        return Err(Error::Argument("solution and path grids differ".into()));
    }
    let d = model.noise_dim();
    let h = sol.step();
    let mut rhs = phi.value(model, 0.0, sol.x(0))?;
    let mut worst: f64 = 0.0;
    for k in 0..sol.len() {
        let (t, x) = (sol.time(k), sol.x(k));
        let z = sol.z(k).unwrap();
        let lhs = &z * phi.value(model, t, x)?;
        worst = worst.max((lhs - &rhs).amax());
        if k + 1 == sol.len() {
            break;
        }
        let b = eval_drift(model, t, x)?;
        let jb = eval_drift_jacobian(model, t, x)?;
        let mut ds = phi.jacobian(model, t, x)? * b - jb * phi.value(model, t, x)? + phi.time_derivative(model, t, x)?;
        let mut noise = DVector::zeros(model.dim());
        for kk in 0..d {
            ds += 0.5 * double_bracket(model, kk, phi, t, x)?;
            noise += bracket_with(model, kk, phi, t, x)? * path.dw(k, kk);
        }
        rhs += &z * (noise + ds * h);
    }
    Ok(worst)
}
