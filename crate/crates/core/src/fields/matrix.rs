//! The directional matrix `A(t, x)`, its δ-scaling, the anisotropic norm and
//! the square extension `Γ_δ` with its `α` factor.

use nalgebra::{DMatrix, DVector, SVD};

use super::model::{eval_sigma, lie_bracket, VectorFieldModel};
use crate::error::{Error, Result};

/// Relative rank tolerance: singular values at or below `RANK_TOL · σ_max`
/// count as zero.
pub const RANK_TOL: f64 = 1e-9;

/// Column of `A` holding `σ_i` (when `i == p`) or `[σ_i, σ_p]`, 0-based.
#[inline]
pub fn col_index(d: usize, i: usize, p: usize) -> usize {
    p * d + i
}

/// The `n × d²` matrix whose column `l(i, p)` is `σ_i` for `i == p` and
/// `[σ_i, σ_p]` otherwise.
#[derive(Debug, Clone, PartialEq)]
pub struct DirectionalMatrix {
    entries: DMatrix<f64>,
    d: usize,
    t: f64,
    x: Vec<f64>,
    singular_values: Vec<f64>,
}

fn sorted_singular_values(m: &DMatrix<f64>) -> Vec<f64> {
    if m.is_empty() {
        return Vec::new();
    }
    let mut sv: Vec<f64> = m.singular_values().iter().copied().collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    sv
}

impl DirectionalMatrix {
    /// Wrap an explicit `n × d²` matrix.
    pub fn from_entries(entries: DMatrix<f64>, d: usize, t: f64, x: Vec<f64>) -> Result<Self> {
        if d == 0 || entries.ncols() != d * d {
            return Err(Error::Argument(format!(
                "directional matrix needs d² = {} columns, got {}",
                d * d,
                entries.ncols()
            )));
        }
        let singular_values = sorted_singular_values(&entries);
        Ok(Self { entries, d, t, x, singular_values })
    }

    pub fn entries(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn n(&self) -> usize {
        self.entries.nrows()
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn m(&self) -> usize {
        self.d * self.d
    }

    pub fn col_index(&self, i: usize, p: usize) -> usize {
        col_index(self.d, i, p)
    }

    pub fn column(&self, i: usize, p: usize) -> DVector<f64> {
        self.entries.column(self.col_index(i, p)).into_owned()
    }

    pub fn base_point(&self) -> (f64, &[f64]) {
        (self.t, &self.x)
    }

    /// Non-increasing, length `min(n, m)`.
    pub fn singular_values(&self) -> &[f64] {
        &self.singular_values
    }

    /// `λ^*`, the largest singular value.
    pub fn lambda_max(&self) -> f64 {
        self.singular_values.first().copied().unwrap_or(0.0)
    }

    /// `λ_*`, the smallest singular value; zero when `n > m`.
    pub fn lambda_min(&self) -> f64 {
        if self.n() > self.m() {
            0.0
        } else {
            self.singular_values.last().copied().unwrap_or(0.0)
        }
    }

    pub fn has_full_row_rank(&self) -> bool {
        self.n() <= self.m() && self.lambda_min() > RANK_TOL * self.lambda_max()
    }

    fn require_full_rank(&self) -> Result<()> {
        if self.has_full_row_rank() {
            Ok(())
        } else {
            Err(Error::Degenerate { lambda: self.lambda_min(), tol: RANK_TOL })
        }
    }
}

/// Evaluate `A(t, x)`.
pub fn directional_matrix<M: VectorFieldModel + ?Sized>(model: &M, t: f64, x: &[f64]) -> Result<DirectionalMatrix> {
    let (n, d) = (model.dim(), model.noise_dim());
    let mut entries = DMatrix::zeros(n, d * d);
    for p in 0..d {
        for i in 0..d {
            let col = if i == p { eval_sigma(model, i, t, x)? } else { lie_bracket(model, i, p, t, x)? };
            entries.set_column(col_index(d, i, p), &col);
        }
    }
    DirectionalMatrix::from_entries(entries, d, t, x.to_vec())
}

/// `λ(t, x)`: smallest singular value of `A`, zero when it has more rows than
/// columns.
pub fn hoermander_lambda(a: &DirectionalMatrix) -> f64 {
    a.lambda_min()
}

/// `A_δ`: σ columns scaled by `√δ`, bracket columns by `δ`.
pub fn scale_matrix(a: &DirectionalMatrix, delta: f64) -> Result<DirectionalMatrix> {
    if !(delta > 0.0 && delta.is_finite()) {
        return Err(Error::Argument(format!("delta must be positive, got {delta}")));
    }
    let d = a.d;
    let mut entries = a.entries.clone();
    for p in 0..d {
        for i in 0..d {
            let s = if i == p { delta.sqrt() } else { delta };
            entries.column_mut(col_index(d, i, p)).scale_mut(s);
        }
    }
    DirectionalMatrix::from_entries(entries, d, a.t, a.x.clone())
}

/// One-sided Jacobi on the columns of `Aᵀ` for a wide full-row-rank `A`
/// (`n × m`, `n ≤ m`): returns `(U, σ, V)` with `A = U diag(σ) Vᵀ`, `σ`
/// non-increasing. Accurate to a few ulps relative to `‖A‖`, which the
/// bidiagonal routine in nalgebra is not when two singular values nearly
/// coincide.
fn jacobi_svd(a: &DMatrix<f64>) -> (DMatrix<f64>, DVector<f64>, DMatrix<f64>) {
    const MAX_SWEEPS: usize = 60;
    let n = a.nrows();
    let mut w = a.transpose();
    let mut u = DMatrix::identity(n, n);
    for _ in 0..MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..n {
            for q in p + 1..n {
                let alpha = w.column(p).norm_squared();
                let beta = w.column(q).norm_squared();
                let gamma = w.column(p).dot(&w.column(q));
                if gamma.abs() <= f64::EPSILON * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for m in [&mut w, &mut u] {
                    for k in 0..m.nrows() {
                        let (xp, xq) = (m[(k, p)], m[(k, q)]);
                        m[(k, p)] = c * xp - s * xq;
                        m[(k, q)] = s * xp + c * xq;
                    }
                }
            }
        }
        if !rotated {
            break;
        }
    }
    let norms: Vec<f64> = (0..n).map(|j| w.column(j).norm()).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| norms[j].total_cmp(&norms[i]));
    let sigma = DVector::from_iterator(n, order.iter().map(|&j| norms[j]));
    let u_sorted = DMatrix::from_fn(n, n, |r, c| u[(r, order[c])]);
    let v = DMatrix::from_fn(w.nrows(), n, |r, c| w[(r, order[c])] / norms[order[c]]);
    (u_sorted, sigma, v)
}

/// Thin factorization `A_δ = U Σ Vᵀ` with `det U = +1` and `Σ` non-increasing.
#[derive(Debug, Clone)]
pub struct AlphaFactor {
    u: DMatrix<f64>,
    sigma: DVector<f64>,
    v_thin: DMatrix<f64>,
}

impl AlphaFactor {
    pub fn new(a_delta: &DirectionalMatrix) -> Result<Self> {
        a_delta.require_full_rank()?;
        let (mut u, sigma, mut v_thin) = jacobi_svd(&a_delta.entries);
        let n = a_delta.n();
        if u.determinant() < 0.0 {
            u.column_mut(n - 1).neg_mut();
            v_thin.column_mut(n - 1).neg_mut();
        }
        Ok(Self { u, sigma, v_thin })
    }

    /// `α = U Σ̄`.
    pub fn alpha(&self) -> DMatrix<f64> {
        &self.u * DMatrix::from_diagonal(&self.sigma)
    }

    /// `det α = Π σ_i = √det(A_δ A_δᵀ)`.
    pub fn det(&self) -> f64 {
        self.sigma.iter().product()
    }

    pub fn u(&self) -> &DMatrix<f64> {
        &self.u
    }

    pub fn singular_values(&self) -> &DVector<f64> {
        &self.sigma
    }

    pub fn v_thin(&self) -> &DMatrix<f64> {
        &self.v_thin
    }

    /// `α⁻¹ y = Σ̄⁻¹ Uᵀ y`.
    pub fn apply_inverse(&self, y: &DVector<f64>) -> DVector<f64> {
        let mut w = self.u.tr_mul(y);
        w.component_div_assign(&self.sigma);
        w
    }

    /// `α⁻ᵀ v = U Σ̄⁻¹ v`.
    pub fn apply_inverse_transpose(&self, v: &DVector<f64>) -> DVector<f64> {
        &self.u * v.component_div(&self.sigma)
    }

    /// `α z`.
    pub fn apply(&self, z: &DVector<f64>) -> DVector<f64> {
        &self.u * z.component_mul(&self.sigma)
    }

    /// `|y|_{A_δ} = |α⁻¹ y|`.
    pub fn norm(&self, y: &DVector<f64>) -> f64 {
        self.apply_inverse(y).norm()
    }
}

/// `α = U Σ̄` and `det α`.
pub fn alpha_factor(a_delta: &DirectionalMatrix) -> Result<(DMatrix<f64>, f64)> {
    let f = AlphaFactor::new(a_delta)?;
    Ok((f.alpha(), f.det()))
}

/// `|y|_{A_δ} = √⟨(A_δ A_δᵀ)⁻¹ y, y⟩`, through the singular-value factorization.
pub fn aniso_norm(a_delta: &DirectionalMatrix, y: &DVector<f64>) -> Result<f64> {
    if y.len() != a_delta.n() {
        return Err(Error::Argument(format!("y has length {}, expected {}", y.len(), a_delta.n())));
    }
    Ok(AlphaFactor::new(a_delta)?.norm(y))
}

/// The square matrix `Γ_δ` whose first `n` rows are `A_δ` and whose remaining
/// rows are an orthonormal basis of the complement of its row space.
///
/// Factorized as `Γ_δ = diag(U, Id) · diag(Σ̄, Id) · [V | Cᵀ]ᵀ`, which gives
/// `Γ_δ⁻¹ = [V | Cᵀ] · diag(Σ̄⁻¹, Id) · diag(Uᵀ, Id)`.
#[derive(Debug, Clone)]
pub struct GammaExtension {
    gamma: DMatrix<f64>,
    factor: AlphaFactor,
    /// `(m − n) × m`, orthonormal rows.
    complement: DMatrix<f64>,
}

impl GammaExtension {
    pub fn new(a_delta: &DirectionalMatrix) -> Result<Self> {
        let factor = AlphaFactor::new(a_delta)?;
        let (n, m) = (a_delta.n(), a_delta.m());

        let mut padded = DMatrix::zeros(m, m);
        padded.rows_mut(0, n).copy_from(&a_delta.entries);
        let svd = SVD::new(padded, false, true);
        let v_t = svd.v_t.expect("requested Vᵀ");
        // project off the row space and re-orthonormalize, so the rows are
        // orthogonal to A_δ to rounding
        let raw = v_t.rows(n, m - n).transpose();
        let v = factor.v_thin();
        let projected = &raw - v * v.tr_mul(&raw);
        let q = projected.qr().q();
        let mut complement = DMatrix::from_fn(m - n, m, |r, c| {
            let s = q.column(r).dot(&raw.column(r)).signum();
            s * q[(c, r)]
        });
        for mut row in complement.row_iter_mut() {
            let scale = row.amax();
            if let Some(first) = row.iter().copied().find(|v| v.abs() > 1e-12 * scale) {
                if first < 0.0 {
                    row.neg_mut();
                }
            }
        }

        let mut gamma = DMatrix::zeros(m, m);
        gamma.rows_mut(0, n).copy_from(&a_delta.entries);
        gamma.rows_mut(n, m - n).copy_from(&complement);
        Ok(Self { gamma, factor, complement })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.gamma
    }

    pub fn complement(&self) -> &DMatrix<f64> {
        &self.complement
    }

    pub fn factor(&self) -> &AlphaFactor {
        &self.factor
    }

    pub fn n(&self) -> usize {
        self.factor.u.nrows()
    }

    pub fn m(&self) -> usize {
        self.gamma.nrows()
    }

    /// `Γ_δ⁻¹ y`.
    pub fn solve(&self, y: &DVector<f64>) -> DVector<f64> {
        let n = self.n();
        let head = self.factor.apply_inverse(&y.rows(0, n).into_owned());
        let tail = y.rows(n, self.m() - n);
        self.factor.v_thin() * head + self.complement.tr_mul(&tail)
    }

    /// `|y|_Γ = |Γ_δ⁻¹ y|`.
    pub fn norm(&self, y: &DVector<f64>) -> f64 {
        self.solve(y).norm()
    }

    /// `J_a(z)`: `z` followed by the complement coordinates of `a`.
    pub fn embed(&self, z: &DVector<f64>, a: &DVector<f64>) -> DVector<f64> {
        let n = self.n();
        let mut out = DVector::zeros(self.m());
        out.rows_mut(0, n).copy_from(z);
        out.rows_mut(n, self.m() - n).copy_from(&(&self.complement * a));
        out
    }

    /// `J_0(z) = (z, 0, …, 0)`.
    pub fn embed_zero(&self, z: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.m());
        out.rows_mut(0, self.n()).copy_from(z);
        out
    }
}

pub fn gamma_extension(a_delta: &DirectionalMatrix) -> Result<GammaExtension> {
    GammaExtension::new(a_delta)
}

/// Numerical rank of `[σ_1 … σ_d](t, x)`.
pub fn dim_span_sigma<M: VectorFieldModel + ?Sized>(model: &M, t: f64, x: &[f64]) -> Result<usize> {
    let (n, d) = (model.dim(), model.noise_dim());
    let mut s = DMatrix::zeros(n, d);
    for j in 0..d {
        s.set_column(j, &eval_sigma(model, j, t, x)?);
    }
    let sv = sorted_singular_values(&s);
    let top = sv.first().copied().unwrap_or(0.0);
    if top == 0.0 {
        return Ok(0);
    }
    Ok(sv.iter().filter(|&&v| v > RANK_TOL * top).count())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::poly::builtin_model;
    use approx::assert_relative_eq;

    fn heisenberg_a() -> DirectionalMatrix {
        directional_matrix(&builtin_model("heisenberg").unwrap(), 0.0, &[0.0; 3]).unwrap()
    }

    #[test]
    fn heisenberg_columns() {
        let a = heisenberg_a();
        let expected = DMatrix::from_column_slice(
            3,
            4,
            &[1.0, 0.0, 0.0, 0.0, 0.0, -1.0, 0.0, 0.0, 1.0, 0.0, 1.0, 0.0],
        );
        assert_eq!(a.entries(), &expected);
        assert_relative_eq!(hoermander_lambda(&a), 1.0, epsilon = 1e-14);
    }

    #[test]
    fn grushin_columns() {
        let a = directional_matrix(&builtin_model("grushin").unwrap(), 0.0, &[0.0; 2]).unwrap();
        let expected = DMatrix::from_column_slice(2, 4, &[1.0, 0.0, 0.0, -1.0, 0.0, 1.0, 0.0, 0.0]);
        assert_eq!(a.entries(), &expected);
        assert_relative_eq!(hoermander_lambda(&a), 1.0, epsilon = 1e-14);
    }

    #[test]
    fn zero_matrix_has_zero_lambda() {
        let a = DirectionalMatrix::from_entries(DMatrix::zeros(2, 4), 2, 0.0, vec![0.0; 2]).unwrap();
        assert_eq!(hoermander_lambda(&a), 0.0);
        assert!(matches!(aniso_norm(&a, &DVector::zeros(2)), Err(Error::Degenerate { .. })));
    }

    #[test]
    fn scaling_rules() {
        let a = heisenberg_a();
        let ad = scale_matrix(&a, 0.01).unwrap();
        let g = ad.entries() * ad.entries().transpose();
        let expected = DMatrix::from_diagonal(&DVector::from_vec(vec![0.01, 0.01, 2e-4]));
        assert!((g - expected).amax() < 1e-16);
        assert_eq!(scale_matrix(&a, 1.0).unwrap().entries(), a.entries());
        assert!(matches!(scale_matrix(&a, 0.0), Err(Error::Argument(_))));

        let single = DirectionalMatrix::from_entries(DMatrix::from_element(1, 1, 2.0), 1, 0.0, vec![0.0]).unwrap();
        assert_relative_eq!(scale_matrix(&single, 0.25).unwrap().entries()[(0, 0)], 1.0);
    }

    #[test]
    fn heisenberg_norm_and_alpha() {
        let delta = 0.01;
        let ad = scale_matrix(&heisenberg_a(), delta).unwrap();
        let y = DVector::from_vec(vec![0.0, 0.0, 1.0]);
        assert_relative_eq!(aniso_norm(&ad, &y).unwrap(), 1.0 / (2f64.sqrt() * delta), max_relative = 1e-12);
        let (alpha, det) = alpha_factor(&ad).unwrap();
        assert_relative_eq!(det, 2f64.sqrt() * delta * delta, max_relative = 1e-12);
        assert_relative_eq!(alpha.determinant(), det, max_relative = 1e-12);
    }

    #[test]
    fn gamma_block_identity() {
        let delta = 0.05;
        let ad = scale_matrix(&heisenberg_a(), delta).unwrap();
        let g = gamma_extension(&ad).unwrap();
        let ggt = g.matrix() * g.matrix().transpose();
        let mut expected = DMatrix::identity(4, 4);
        expected.view_mut((0, 0), (3, 3)).copy_from(&(ad.entries() * ad.entries().transpose()));
        assert!((ggt - expected).amax() < 1e-10);
        let y = DVector::from_vec(vec![0.3, -1.0, 2.0, 0.7]);
        assert!((g.matrix() * g.solve(&y) - y).amax() < 1e-12);
        // the complement row's first nonzero entry is positive
        let row = g.complement().row(0);
        assert!(row.iter().find(|v| v.abs() > 1e-12).unwrap() > &0.0);
    }

    #[test]
    fn square_gamma_is_a_delta() {
        let a = DirectionalMatrix::from_entries(DMatrix::from_element(1, 1, -3.0), 1, 0.0, vec![0.0]).unwrap();
        let ad = scale_matrix(&a, 0.1).unwrap();
        let g = gamma_extension(&ad).unwrap();
        assert_eq!(g.matrix(), ad.entries());
    }

    #[test]
    fn dim_span() {
        assert_eq!(dim_span_sigma(&builtin_model("heisenberg").unwrap(), 0.0, &[0.0; 3]).unwrap(), 2);
        assert_eq!(dim_span_sigma(&builtin_model("grushin").unwrap(), 0.0, &[0.0; 2]).unwrap(), 1);
        let zero = crate::fields::FnModel::new(2, 2, |_, _, _, o| o.fill(0.0), |_, _, o| o.fill(0.0));
        assert_eq!(dim_span_sigma(&zero, 0.0, &[0.0; 2]).unwrap(), 0);
    }
}
