//! Coefficient models `σ_j(t, x)`, `b(t, x)` and their derivatives.
//!
//! Everything works on flat `&[f64]` buffers so that the path integrators can
//! evaluate coefficients without allocating. Matrices are row-major: the
//! Jacobian entry `∂_b σ^a` lives at `a * n + b`, and the second derivative
//! `∂_b ∂_c σ^a` at `(a * n + b) * n + c`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Default central finite-difference step.
pub const DEFAULT_FD_STEP: f64 = 1e-5;

/// A Stratonovich SDE `dX = Σ_j σ_j(t, X) ∘ dW^j + b(t, X) dt` on `R^n` driven
/// by a `d`-dimensional Brownian motion.
///
/// Only `sigma` and `drift` are mandatory; every derivative falls back to a
/// central finite difference with step [`VectorFieldModel::fd_step`].
pub trait VectorFieldModel: Send + Sync {
    /// State dimension `n`.
    fn dim(&self) -> usize;

    /// Driving dimension `d`.
    fn noise_dim(&self) -> usize;

    fn sigma(&self, j: usize, t: f64, x: &[f64], out: &mut [f64]);

    fn drift(&self, t: f64, x: &[f64], out: &mut [f64]);

    fn sigma_jacobian(&self, j: usize, t: f64, x: &[f64], out: &mut [f64]) {
        fd_jacobian(|y, o| self.sigma(j, t, y, o), self.dim(), x, self.fd_step(), out);
    }

    fn drift_jacobian(&self, t: f64, x: &[f64], out: &mut [f64]) {
        fd_jacobian(|y, o| self.drift(t, y, o), self.dim(), x, self.fd_step(), out);
    }

    /// Second spatial derivatives of `σ_j`, `n × n × n`.
    fn sigma_hessian(&self, j: usize, t: f64, x: &[f64], out: &mut [f64]) {
        let n = self.dim();
        fd_jacobian(
            |y, o| self.sigma_jacobian(j, t, y, o),
            n * n,
            x,
            self.fd_step(),
            out,
        );
    }

    fn sigma_time_derivative(&self, j: usize, t: f64, x: &[f64], out: &mut [f64]) {
        let n = self.dim();
        let h = self.fd_step();
        let mut plus = vec![0.0; n];
        let mut minus = vec![0.0; n];
        self.sigma(j, t + h, x, &mut plus);
        self.sigma(j, t - h, x, &mut minus);
        for a in 0..n {
            out[a] = (plus[a] - minus[a]) / (2.0 * h);
        }
    }

    /// Itô drift `b + ½ Σ_j ∂_{σ_j} σ_j`.
    fn ito_drift(&self, t: f64, x: &[f64], out: &mut [f64]) {
        let n = self.dim();
        self.drift(t, x, out);
        let mut s = vec![0.0; n];
        let mut jac = vec![0.0; n * n];
        for j in 0..self.noise_dim() {
            self.sigma(j, t, x, &mut s);
            self.sigma_jacobian(j, t, x, &mut jac);
            for a in 0..n {
                let row = &jac[a * n..(a + 1) * n];
                out[a] += 0.5 * row.iter().zip(&s).map(|(u, v)| u * v).sum::<f64>();
            }
        }
    }

    /// Highest derivative order available in closed form (0 when every
    /// derivative comes from finite differences).
    fn derivative_order(&self) -> usize {
        0
    }

    /// Growth constant for the linear-growth diagnostic, when known.
    fn kappa(&self) -> Option<f64> {
        None
    }

    fn fd_step(&self) -> f64 {
        DEFAULT_FD_STEP
    }
}

/// Central finite-difference Jacobian of `f: R^n → R^rows`, row-major.
pub fn fd_jacobian<F>(f: F, rows: usize, x: &[f64], h: f64, out: &mut [f64])
where
    F: Fn(&[f64], &mut [f64]),
{
    let n = x.len();
    let mut xp = x.to_vec();
    let mut plus = vec![0.0; rows];
    let mut minus = vec![0.0; rows];
    for c in 0..n {
        xp[c] = x[c] + h;
        f(&xp, &mut plus);
        xp[c] = x[c] - h;
        f(&xp, &mut minus);
        xp[c] = x[c];
        for r in 0..rows {
            out[r * n + c] = (plus[r] - minus[r]) / (2.0 * h);
        }
    }
}

fn check_finite(values: &[f64], field: impl FnOnce() -> String, t: f64, x: &[f64]) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Evaluation { field: field(), t, x: x.to_vec() })
    }
}

fn check_index<M: VectorFieldModel + ?Sized>(model: &M, j: usize) -> Result<()> {
    if j < model.noise_dim() {
        Ok(())
    } else {
        Err(Error::Argument(format!(
            "field index {j} out of range for d = {}",
            model.noise_dim()
        )))
    }
}

/// `σ_j(t, x)` with a finiteness check.
pub fn eval_sigma<M: VectorFieldModel + ?Sized>(model: &M, j: usize, t: f64, x: &[f64]) -> Result<DVector<f64>> {
    check_index(model, j)?;
    let mut out = vec![0.0; model.dim()];
    model.sigma(j, t, x, &mut out);
    check_finite(&out, || format!("sigma{}", j + 1), t, x)?;
    Ok(DVector::from_vec(out))
}

pub fn eval_drift<M: VectorFieldModel + ?Sized>(model: &M, t: f64, x: &[f64]) -> Result<DVector<f64>> {
    let mut out = vec![0.0; model.dim()];
    model.drift(t, x, &mut out);
    check_finite(&out, || "b".to_string(), t, x)?;
    Ok(DVector::from_vec(out))
}

pub fn eval_sigma_jacobian<M: VectorFieldModel + ?Sized>(
    model: &M,
    j: usize,
    t: f64,
    x: &[f64],
) -> Result<DMatrix<f64>> {
    check_index(model, j)?;
    let n = model.dim();
    let mut out = vec![0.0; n * n];
    model.sigma_jacobian(j, t, x, &mut out);
    check_finite(&out, || format!("jacobian of sigma{}", j + 1), t, x)?;
    Ok(DMatrix::from_row_slice(n, n, &out))
}

pub fn eval_drift_jacobian<M: VectorFieldModel + ?Sized>(model: &M, t: f64, x: &[f64]) -> Result<DMatrix<f64>> {
    let n = model.dim();
    let mut out = vec![0.0; n * n];
    model.drift_jacobian(t, x, &mut out);
    check_finite(&out, || "jacobian of b".to_string(), t, x)?;
    Ok(DMatrix::from_row_slice(n, n, &out))
}

/// Lie bracket `[σ_i, σ_p] = ∂_{σ_i} σ_p − ∂_{σ_p} σ_i` (0-based indices).
pub fn lie_bracket<M: VectorFieldModel + ?Sized>(
    model: &M,
    i: usize,
    p: usize,
    t: f64,
    x: &[f64],
) -> Result<DVector<f64>> {
    let si = eval_sigma(model, i, t, x)?;
    let sp = eval_sigma(model, p, t, x)?;
    let ji = eval_sigma_jacobian(model, i, t, x)?;
    let jp = eval_sigma_jacobian(model, p, t, x)?;
    Ok(&jp * &si - &ji * &sp)
}

/// Directional derivative `∂_{σ_i} σ_j = (∇σ_j) σ_i`.
pub fn directional_derivative<M: VectorFieldModel + ?Sized>(
    model: &M,
    i: usize,
    j: usize,
    t: f64,
    x: &[f64],
) -> Result<DVector<f64>> {
    let si = eval_sigma(model, i, t, x)?;
    let jj = eval_sigma_jacobian(model, j, t, x)?;
    Ok(&jj * &si)
}

/// Contract the second-derivative tensor of a field with `v` in its first
/// derivative slot: `(H·v)_{ac} = Σ_b ∂_b ∂_c f^a v_b`.
pub(crate) fn contract_hessian(hess: &[f64], n: usize, v: &DVector<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(n, n, |a, c| (0..n).map(|b| hess[(a * n + b) * n + c] * v[b]).sum())
}

/// Spatial Jacobian of `[σ_i, σ_p]` from the closed-form second derivatives.
pub fn bracket_jacobian<M: VectorFieldModel + ?Sized>(
    model: &M,
    i: usize,
    p: usize,
    t: f64,
    x: &[f64],
) -> Result<DMatrix<f64>> {
    let n = model.dim();
    let si = eval_sigma(model, i, t, x)?;
    let sp = eval_sigma(model, p, t, x)?;
    let ji = eval_sigma_jacobian(model, i, t, x)?;
    let jp = eval_sigma_jacobian(model, p, t, x)?;
    let mut hi = vec![0.0; n * n * n];
    let mut hp = vec![0.0; n * n * n];
    model.sigma_hessian(i, t, x, &mut hi);
    model.sigma_hessian(p, t, x, &mut hp);
    check_finite(&hi, || format!("hessian of sigma{}", i + 1), t, x)?;
    check_finite(&hp, || format!("hessian of sigma{}", p + 1), t, x)?;
    Ok(contract_hessian(&hp, n, &si) + &jp * &ji - contract_hessian(&hi, n, &sp) - &ji * &jp)
}

type SigmaFn = dyn Fn(usize, f64, &[f64], &mut [f64]) + Send + Sync;
type DriftFn = dyn Fn(f64, &[f64], &mut [f64]) + Send + Sync;

/// A model given by plain closures; all derivatives come from finite
/// differences.
pub struct FnModel {
    n: usize,
    d: usize,
    sigma: Box<SigmaFn>,
    drift: Box<DriftFn>,
    fd_step: f64,
    kappa: Option<f64>,
}

impl FnModel {
    pub fn new<S, B>(n: usize, d: usize, sigma: S, drift: B) -> Self
    where
        S: Fn(usize, f64, &[f64], &mut [f64]) + Send + Sync + 'static,
        B: Fn(f64, &[f64], &mut [f64]) + Send + Sync + 'static,
    {
        Self {
            n,
            d,
            sigma: Box::new(sigma),
            drift: Box::new(drift),
            fd_step: DEFAULT_FD_STEP,
            kappa: None,
        }
    }

    pub fn with_fd_step(mut self, h: f64) -> Self {
        self.fd_step = h;
        self
    }

    pub fn with_kappa(mut self, kappa: f64) -> Self {
        self.kappa = Some(kappa);
        self
    }
}

impl std::fmt::Debug for FnModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FnModel")
            .field("n", &self.n)
            .field("d", &self.d)
            .field("fd_step", &self.fd_step)
            .finish_non_exhaustive()
    }
}

impl VectorFieldModel for FnModel {
    fn dim(&self) -> usize {
        self.n
    }

    fn noise_dim(&self) -> usize {
        self.d
    }

    fn sigma(&self, j: usize, t: f64, x: &[f64], out: &mut [f64]) {
        (self.sigma)(j, t, x, out)
    }

    fn drift(&self, t: f64, x: &[f64], out: &mut [f64]) {
        (self.drift)(t, x, out)
    }

    fn kappa(&self) -> Option<f64> {
        self.kappa
    }

    fn fd_step(&self) -> f64 {
        self.fd_step
    }
}

/// Linear-growth diagnostic `Σ_j |σ_j(t,x)| + |b(t,x)| ≤ κ(1 + |x|)` at one
/// point. Returns the ratio of the left side to `1 + |x|`.
pub fn growth_ratio<M: VectorFieldModel + ?Sized>(model: &M, t: f64, x: &[f64]) -> Result<f64> {
    let mut total = eval_drift(model, t, x)?.norm();
    for j in 0..model.noise_dim() {
        total += eval_sigma(model, j, t, x)?.norm();
    }
    let xn = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    Ok(total / (1.0 + xn))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn trig_model() -> FnModel {
        FnModel::new(
            2,
            2,
            |j, t, x, out| match j {
                0 => {
                    out[0] = x[1].sin();
                    out[1] = (0.5 * x[0]).cos() * (1.0 + t);
                }
                _ => {
                    out[0] = (x[0] * x[1]).exp() * 0.1;
                    out[1] = 1.0;
                }
            },
            |_, x, out| {
                out[0] = -x[0];
                out[1] = 0.0;
            },
        )
    }

    fn trig_jacobian(j: usize, t: f64, x: &[f64]) -> [f64; 4] {
        match j {
            0 => [0.0, x[1].cos(), -0.5 * (0.5 * x[0]).sin() * (1.0 + t), 0.0],
            _ => {
                let e = (x[0] * x[1]).exp() * 0.1;
                [x[1] * e, x[0] * e, 0.0, 0.0]
            }
        }
    }

    #[test]
    fn fd_jacobian_converges_at_order_two() {
        let x = [0.7, -0.3];
        let errs: Vec<f64> = [1e-2, 5e-3, 2.5e-3]
            .iter()
            .map(|&h| {
                let m = trig_model().with_fd_step(h);
                let mut worst: f64 = 0.0;
                for j in 0..2 {
                    let mut out = [0.0; 4];
                    m.sigma_jacobian(j, 0.2, &x, &mut out);
                    let exact = trig_jacobian(j, 0.2, &x);
                    for k in 0..4 {
                        worst = worst.max((out[k] - exact[k]).abs());
                    }
                }
                worst
            })
            .collect();
        for w in errs.windows(2) {
            let ratio = w[0] / w[1];
            assert!((ratio - 4.0).abs() < 0.3, "ratio {ratio}");
        }
    }

    #[test]
    fn bracket_is_antisymmetric() {
        let m = trig_model();
        let x = [0.4, 1.1];
        let a = lie_bracket(&m, 0, 1, 0.0, &x).unwrap();
        let b = lie_bracket(&m, 1, 0, 0.0, &x).unwrap();
        assert!((a + b).norm() < 1e-12);
        assert!(lie_bracket(&m, 1, 1, 0.0, &x).unwrap().norm() < 1e-12);
    }

    #[test]
    fn non_finite_output_is_reported() {
        let m = FnModel::new(1, 1, |_, _, x, out| out[0] = 1.0 / x[0], |_, _, out| out[0] = 0.0);
        match eval_sigma(&m, 0, 0.5, &[0.0]) {
            Err(Error::Evaluation { field, t, x }) => {
                assert_eq!(field, "sigma1");
                assert_eq!(t, 0.5);
                assert_eq!(x, vec![0.0]);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn out_of_range_index() {
        let m = trig_model();
        assert!(matches!(lie_bracket(&m, 0, 2, 0.0, &[0.0, 0.0]), Err(Error::Argument(_))));
    }
}
