//! Euler–Maruyama integration of the Stratonovich SDE through its Itô form,
//! the tangent flow `Y` and its inverse `Z`, the reduced Malliavin covariance
//! and a pathwise check of the Itô representation of `Z_t φ(t, X_t)`.

mod representation;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

pub use representation::{ito_representation_check, NamedField};

use crate::error::{Error, Result};
use crate::fields::{contract_hessian, directional_matrix, scale_matrix, AlphaFactor, VectorFieldModel};
use crate::paths::BrownianGrid;

/// Default bound on `max_k ‖Z_k Y_k − Id‖`.
pub const FLOW_TOL: f64 = 1e-4;

/// States on the fine grid, and optionally the tangent flows.
#[derive(Debug, Clone, PartialEq)]
pub struct SdeSolution {
    n: usize,
    h: f64,
    /// `(K + 1) × n`.
    x: Vec<f64>,
    /// `(K + 1) × n × n`, row-major per point.
    y: Option<Vec<f64>>,
    z: Option<Vec<f64>>,
}

impl SdeSolution {
    pub fn dim(&self) -> usize {
        self.n
    }

    /// Number of grid points `K + 1`.
    pub fn len(&self) -> usize {
        self.x.len() / self.n
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn step(&self) -> f64 {
        self.h
    }

    pub fn time(&self, k: usize) -> f64 {
        k as f64 * self.h
    }

    pub fn x(&self, k: usize) -> &[f64] {
        &self.x[k * self.n..(k + 1) * self.n]
    }

    pub fn endpoint(&self) -> &[f64] {
        self.x(self.len() - 1)
    }

    fn matrix_at(data: &Option<Vec<f64>>, n: usize, k: usize) -> Option<DMatrix<f64>> {
        data.as_ref().map(|v| DMatrix::from_row_slice(n, n, &v[k * n * n..(k + 1) * n * n]))
    }

    pub fn y(&self, k: usize) -> Option<DMatrix<f64>> {
        Self::matrix_at(&self.y, self.n, k)
    }

    pub fn z(&self, k: usize) -> Option<DMatrix<f64>> {
        Self::matrix_at(&self.z, self.n, k)
    }

    pub fn has_flows(&self) -> bool {
        self.y.is_some() && self.z.is_some()
    }

    /// `max_k ‖Z_k Y_k − Id‖_F`, or `None` without flows.
    pub fn flow_inverse_error(&self) -> Option<f64> {
        if !self.has_flows() {
            return None;
        }
        let id = DMatrix::<f64>::identity(self.n, self.n);
        Some(
            (0..self.len())
                .map(|k| (self.z(k).unwrap() * self.y(k).unwrap() - &id).norm())
                .fold(0.0, f64::max),
        )
    }
}

/// Scratch buffers for one integration step.
struct Workspace {
    drift: Vec<f64>,
    sig: Vec<f64>,
    jac: Vec<f64>,
    hess: Vec<f64>,
    jac_b: Vec<f64>,
}

impl Workspace {
    fn new(n: usize) -> Self {
        Self { drift: vec![0.0; n], sig: vec![0.0; n], jac: vec![0.0; n * n], hess: vec![0.0; n * n * n], jac_b: vec![0.0; n * n] }
    }
}

#[inline]
fn em_step<M: VectorFieldModel + ?Sized>(model: &M, t: f64, h: f64, x: &mut [f64], dw: &[f64], ws: &mut Workspace) {
    model.ito_drift(t, x, &mut ws.drift);
    let n = x.len();
    let mut next = [0.0; 16];
    let next = if n <= 16 { &mut next[..n] } else { unreachable!("state dimension above 16") };
    for a in 0..n {
        next[a] = x[a] + ws.drift[a] * h;
    }
    for (j, &dwj) in dw.iter().enumerate() {
        model.sigma(j, t, x, &mut ws.sig);
        for a in 0..n {
            next[a] += ws.sig[a] * dwj;
        }
    }
    x.copy_from_slice(next);
}

fn check_inputs<M: VectorFieldModel + ?Sized>(model: &M, x0: &[f64], d: usize) -> Result<()> {
    if x0.len() != model.dim() {
        return Err(Error::Argument(format!("x0 has length {}, model dimension is {}", x0.len(), model.dim())));
    }
    if d != model.noise_dim() {
        return Err(Error::Argument(format!("path dimension {d} does not match model d = {}", model.noise_dim())));
    }
    if model.dim() > 16 {
        return Err(Error::Argument("state dimension above 16 is not supported".into()));
    }
    Ok(())
}

/// Integrate `X` along `path`.
pub fn integrate<M: VectorFieldModel + ?Sized>(model: &M, x0: &[f64], path: &BrownianGrid) -> Result<SdeSolution> {
    run(model, x0, path, false)
}

/// Integrate `X`, `Y` and `Z` along `path` and check `Z Y = Id` within
/// [`FLOW_TOL`].
pub fn tangent_flows<M: VectorFieldModel + ?Sized>(model: &M, x0: &[f64], path: &BrownianGrid) -> Result<SdeSolution> {
    tangent_flows_with_tol(model, x0, path, FLOW_TOL)
}

pub fn tangent_flows_with_tol<M: VectorFieldModel + ?Sized>(
    model: &M,
    x0: &[f64],
    path: &BrownianGrid,
    flow_tol: f64,
) -> Result<SdeSolution> {
    let sol = run(model, x0, path, true)?;
    let error = sol.flow_inverse_error().expect("flows computed");
    if error > flow_tol {
        return Err(Error::FlowAccuracy { error, tol: flow_tol });
    }
    Ok(sol)
}

fn run<M: VectorFieldModel + ?Sized>(model: &M, x0: &[f64], path: &BrownianGrid, flows: bool) -> Result<SdeSolution> {
    let d = path.d();
    check_inputs(model, x0, d)?;
    let n = model.dim();
    let h = path.step();
    let steps = path.n_steps();
    let mut xs = Vec::with_capacity((steps + 1) * n);
    xs.extend_from_slice(x0);
    let id = DMatrix::<f64>::identity(n, n);
    let mut ys = flows.then(|| Vec::with_capacity((steps + 1) * n * n));
    let mut zs = flows.then(|| Vec::with_capacity((steps + 1) * n * n));
    let (mut y, mut z) = (id.clone(), id.clone());
    let push = |buf: &mut Option<Vec<f64>>, m: &DMatrix<f64>| {
        if let Some(b) = buf {
            b.extend(m.transpose().iter());
        }
    };
    push(&mut ys, &y);
    push(&mut zs, &z);

    let mut ws = Workspace::new(n);
    let mut x = x0.to_vec();
    let mut dw = vec![0.0; d];
    for k in 0..steps {
        let t = k as f64 * h;
        for (i, v) in dw.iter_mut().enumerate() {
            *v = path.dw(k, i);
        }
        if flows {
            let (ny, nz) = flow_step(model, t, h, &x, &dw, &y, &z, &mut ws);
            y = ny;
            z = nz;
        }
        em_step(model, t, h, &mut x, &dw, &mut ws);
        let finite = x.iter().all(|v| v.is_finite())
            && (!flows || (y.iter().all(|v| v.is_finite()) && z.iter().all(|v| v.is_finite())));
        if !finite {
            return Err(Error::BlowUp { index: k + 1 });
        }
        xs.extend_from_slice(&x);
        push(&mut ys, &y);
        push(&mut zs, &z);
    }
    Ok(SdeSolution { n, h, x: xs, y: ys, z: zs })
}

#[allow(clippy::too_many_arguments)]
fn flow_step<M: VectorFieldModel + ?Sized>(
    model: &M,
    t: f64,
    h: f64,
    x: &[f64],
    dw: &[f64],
    y: &DMatrix<f64>,
    z: &DMatrix<f64>,
    ws: &mut Workspace,
) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = x.len();
    model.drift_jacobian(t, x, &mut ws.jac_b);
    let jb = DMatrix::from_row_slice(n, n, &ws.jac_b);
    let mut cy = jb.clone();
    let mut cz = -jb;
    let mut noise_y = DMatrix::zeros(n, n);
    let mut noise_z = DMatrix::zeros(n, n);
    for (j, &dwj) in dw.iter().enumerate() {
        model.sigma(j, t, x, &mut ws.sig);
        model.sigma_jacobian(j, t, x, &mut ws.jac);
        let jac = DMatrix::from_row_slice(n, n, &ws.jac);
        let jj = &jac * &jac;
        if model.derivative_order() >= 2 || !is_zero(&ws.jac) {
            model.sigma_hessian(j, t, x, &mut ws.hess);
        } else {
            ws.hess.fill(0.0);
        }
        let hs = contract_hessian(&ws.hess, n, &DVector::from_column_slice(&ws.sig));
        cy += 0.5 * (&jj + &hs);
        cz += 0.5 * (&jj - &hs);
        noise_y += &jac * dwj;
        noise_z += &jac * dwj;
    }
    let ny = y + (&cy * y) * h + &noise_y * y;
    let nz = z + (z * &cz) * h - z * &noise_z;
    (ny, nz)
}

fn is_zero(v: &[f64]) -> bool {
    v.iter().all(|&a| a == 0.0)
}

/// Endpoint `X_δ` only, drawing increments from `rng` in the same order as
/// [`BrownianGrid::sample_with`], without storing the path.
pub fn integrate_endpoint<M: VectorFieldModel + ?Sized>(
    model: &M,
    x0: &[f64],
    rng: &mut ChaCha8Rng,
    delta: f64,
    steps_per_sub: usize,
) -> Result<Vec<f64>> {
    let d = model.noise_dim();
    check_inputs(model, x0, d)?;
    let steps = steps_per_sub * d;
    let h = delta / steps as f64;
    let sd = h.sqrt();
    let mut ws = Workspace::new(model.dim());
    let mut x = x0.to_vec();
    let mut dw = vec![0.0; d];
    // increments as differences of the running path, like a stored grid
    let mut w = vec![0.0; d];
    for k in 0..steps {
        for (v, wi) in dw.iter_mut().zip(w.iter_mut()) {
            let next = *wi + sd * rng.sample::<f64, _>(StandardNormal);
            *v = next - *wi;
            *wi = next;
        }
        em_step(model, k as f64 * h, h, &mut x, &dw, &mut ws);
        if !x.iter().all(|v| v.is_finite()) {
            return Err(Error::BlowUp { index: k + 1 });
        }
    }
    Ok(x)
}

/// `γ̄_F = α⁻¹ (∫_0^δ Z σ σᵀ Zᵀ ds) α⁻ᵀ` by the trapezoidal rule on the grid,
/// and its smallest eigenvalue.
pub fn reduced_malliavin_covariance<M: VectorFieldModel + ?Sized>(
    model: &M,
    sol: &SdeSolution,
    alpha: &AlphaFactor,
) -> Result<(DMatrix<f64>, f64)> {
    if !sol.has_flows() {
        return Err(Error::Argument("reduced covariance needs the tangent flows".into()));
    }
    let n = sol.dim();
    let d = model.noise_dim();
    let mut integral = DMatrix::<f64>::zeros(n, n);
    let mut sig = vec![0.0; n];
    let last = sol.len() - 1;
    for k in 0..=last {
        let w = if k == 0 || k == last { 0.5 } else { 1.0 } * sol.step();
        let z = sol.z(k).unwrap();
        for j in 0..d {
            model.sigma(j, sol.time(k), sol.x(k), &mut sig);
            let v = &z * DVector::from_column_slice(&sig);
            integral += w * &v * v.transpose();
        }
    }
    // α⁻¹ M α⁻ᵀ = Σ⁻¹ Uᵀ M U Σ⁻¹
    let u = alpha.u();
    let s = alpha.singular_values();
    let mut g = u.transpose() * integral * u;
    for a in 0..n {
        for b in 0..n {
            g[(a, b)] /= s[a] * s[b];
        }
    }
    let g = 0.5 * (&g + g.transpose());
    let lambda = SymmetricEigen::new(g.clone()).eigenvalues.min();
    Ok((g, lambda))
}

/// `λ_*(γ̄_F)` on paths `0..n_paths` of `seed`, with `α` from `A_δ(0, x₀)`.
pub fn lambda_star_samples<M: VectorFieldModel + ?Sized>(
    model: &M,
    x0: &[f64],
    delta: f64,
    n_paths: u64,
    steps_per_sub: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    let a_delta = scale_matrix(&directional_matrix(model, 0.0, x0)?, delta)?;
    let alpha = AlphaFactor::new(&a_delta)?;
    let d = model.noise_dim();
    (0..n_paths)
        .into_par_iter()
        .map(|idx| {
            let path = BrownianGrid::sample(seed, idx, d, delta, steps_per_sub)?;
            let sol = tangent_flows(model, x0, &path)?;
            Ok(reduced_malliavin_covariance(model, &sol, &alpha)?.1)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::{builtin_model, FnModel};
    use crate::paths::sample_path;

    #[test]
    fn constant_drift_only() {
        let m = FnModel::new(2, 1, |_, _, _, o| o.fill(0.0), |_, _, o| o.copy_from_slice(&[1.0, -2.0]));
        let path = sample_path(1, 1, 0.3, 16).unwrap();
        let sol = integrate(&m, &[0.5, 0.5], &path).unwrap();
        let end = sol.endpoint();
        assert!((end[0] - 0.8).abs() < 1e-14 && (end[1] + 0.1).abs() < 1e-14);
    }

    #[test]
    fn heisenberg_first_coordinates_are_brownian() {
        let m = builtin_model("heisenberg").unwrap();
        let path = sample_path(3, 2, 0.1, 64).unwrap();
        let sol = integrate(&m, &[0.0; 3], &path).unwrap();
        let w = path.endpoint();
        assert!((sol.endpoint()[0] - w[0]).abs() < 1e-14);
        assert!((sol.endpoint()[1] - w[1]).abs() < 1e-14);
        // third coordinate is the Lévy area
        let full = path.full_iterated();
        let area = 0.5 * (full[1] - full[2]);
        assert!((sol.endpoint()[2] - area).abs() < 1e-12);
    }

    #[test]
    fn heisenberg_flows() {
        let m = builtin_model("heisenberg").unwrap();
        let path = sample_path(8, 2, 0.2, 64).unwrap();
        let sol = tangent_flows(&m, &[0.0; 3], &path).unwrap();
        assert!(sol.flow_inverse_error().unwrap() < 1e-12);
        let y = sol.y(sol.len() - 1).unwrap();
        for a in 0..3 {
            assert_eq!(y[(a, a)], 1.0);
            for b in a + 1..3 {
                assert_eq!(y[(a, b)], 0.0);
            }
        }
    }

    #[test]
    fn streaming_endpoint_matches_stored_path() {
        let m = builtin_model("grushin").unwrap();
        let path = BrownianGrid::sample(5, 7, 2, 0.1, 32).unwrap();
        let stored = integrate(&m, &[0.2, 0.0], &path).unwrap();
        let mut rng = crate::rng::path_rng(5, 7);
        let streamed = integrate_endpoint(&m, &[0.2, 0.0], &mut rng, 0.1, 32).unwrap();
        assert_eq!(stored.endpoint(), &streamed[..]);
    }

    #[test]
    fn elliptic_reduced_covariance_is_identity() {
        let m = builtin_model("elliptic").unwrap();
        let delta = 0.07;
        let path = sample_path(2, 2, delta, 32).unwrap();
        let sol = tangent_flows(&m, &[0.0; 2], &path).unwrap();
        let ad = scale_matrix(&directional_matrix(&m, 0.0, &[0.0; 2]).unwrap(), delta).unwrap();
        let alpha = AlphaFactor::new(&ad).unwrap();
        let (g, lambda) = reduced_malliavin_covariance(&m, &sol, &alpha).unwrap();
        assert!((g - DMatrix::<f64>::identity(2, 2)).amax() < 1e-12);
        assert!((lambda - 1.0).abs() < 1e-12);
    }

    #[test]
    fn blow_up_is_reported() {
        let m = FnModel::new(1, 1, |_, _, _, o| o[0] = 0.0, |_, x, o| o[0] = x[0] * x[0] * 1e6);
        let path = sample_path(1, 1, 1.0, 64).unwrap();
        assert!(matches!(integrate(&m, &[1.0], &path), Err(Error::BlowUp { .. })));
    }
}
