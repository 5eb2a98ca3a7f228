//! Polynomial coefficient models with exact derivatives, the built-in model
//! registry and the declarative coefficient-table format.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::model::VectorFieldModel;
use crate::error::{Error, Result};

/// `coef · t^t_pow · Π x_v^p` with `x_pows` sorted by variable.
#[derive(Debug, Clone, PartialEq)]
struct Monomial {
    coef: f64,
    t_pow: u32,
    x_pows: Vec<(usize, u32)>,
}

impl Monomial {
    #[inline]
    fn eval(&self, t: f64, x: &[f64]) -> f64 {
        let mut v = self.coef;
        if self.t_pow > 0 {
            v *= t.powi(self.t_pow as i32);
        }
        for &(var, p) in &self.x_pows {
            v *= if p == 1 { x[var] } else { x[var].powi(p as i32) };
        }
        v
    }

    fn same_powers(&self, other: &Monomial) -> bool {
        self.t_pow == other.t_pow && self.x_pows == other.x_pows
    }
}

/// A real polynomial in `(t, x_0, …, x_{n−1})`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Polynomial {
    terms: Vec<Monomial>,
}

impl Polynomial {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn constant(c: f64) -> Self {
        Self::monomial(c, 0, &[])
    }

    /// Single term `coef · t^t_pow · Π_v x_v^{exps[v]}`.
    pub fn monomial(coef: f64, t_pow: u32, exps: &[u32]) -> Self {
        let x_pows = exps
            .iter()
            .enumerate()
            .filter(|(_, &p)| p > 0)
            .map(|(v, &p)| (v, p))
            .collect();
        let mut p = Self { terms: vec![Monomial { coef, t_pow, x_pows }] };
        p.canonicalize();
        p
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn degree(&self) -> u32 {
        self.terms
            .iter()
            .map(|m| m.t_pow + m.x_pows.iter().map(|&(_, p)| p).sum::<u32>())
            .max()
            .unwrap_or(0)
    }

    #[inline]
    pub fn eval(&self, t: f64, x: &[f64]) -> f64 {
        self.terms.iter().map(|m| m.eval(t, x)).sum()
    }

    fn canonicalize(&mut self) {
        let mut merged: Vec<Monomial> = Vec::with_capacity(self.terms.len());
        for m in self.terms.drain(..) {
            if let Some(existing) = merged.iter_mut().find(|e| e.same_powers(&m)) {
                existing.coef += m.coef;
            } else {
                merged.push(m);
            }
        }
        merged.retain(|m| m.coef != 0.0);
        merged.sort_by(|a, b| (a.t_pow, &a.x_pows).cmp(&(b.t_pow, &b.x_pows)));
        self.terms = merged;
    }

    /// `∂/∂x_var`.
    pub fn d_dx(&self, var: usize) -> Self {
        let terms = self
            .terms
            .iter()
            .filter_map(|m| {
                let pos = m.x_pows.iter().position(|&(v, _)| v == var)?;
                let (_, p) = m.x_pows[pos];
                let mut x_pows = m.x_pows.clone();
                if p == 1 {
                    x_pows.remove(pos);
                } else {
                    x_pows[pos].1 = p - 1;
                }
                Some(Monomial { coef: m.coef * p as f64, t_pow: m.t_pow, x_pows })
            })
            .collect();
        let mut out = Self { terms };
        out.canonicalize();
        out
    }

    /// `∂/∂t`.
    pub fn d_dt(&self) -> Self {
        let terms = self
            .terms
            .iter()
            .filter(|m| m.t_pow > 0)
            .map(|m| Monomial { coef: m.coef * m.t_pow as f64, t_pow: m.t_pow - 1, x_pows: m.x_pows.clone() })
            .collect();
        let mut out = Self { terms };
        out.canonicalize();
        out
    }

    pub fn add(&self, other: &Self) -> Self {
        let mut out = Self { terms: self.terms.iter().chain(&other.terms).cloned().collect() };
        out.canonicalize();
        out
    }

    pub fn scale(&self, c: f64) -> Self {
        let mut out = Self {
            terms: self.terms.iter().map(|m| Monomial { coef: m.coef * c, ..m.clone() }).collect(),
        };
        out.canonicalize();
        out
    }

    pub fn mul(&self, other: &Self) -> Self {
        let mut terms = Vec::with_capacity(self.terms.len() * other.terms.len());
        for a in &self.terms {
            for b in &other.terms {
                let mut x_pows = a.x_pows.clone();
                for &(v, p) in &b.x_pows {
                    match x_pows.iter_mut().find(|(w, _)| *w == v) {
                        Some(e) => e.1 += p,
                        None => x_pows.push((v, p)),
                    }
                }
                x_pows.sort_unstable();
                terms.push(Monomial { coef: a.coef * b.coef, t_pow: a.t_pow + b.t_pow, x_pows });
            }
        }
        let mut out = Self { terms };
        out.canonicalize();
        out
    }

    fn to_terms(&self, field: &str, component: usize, n: usize) -> Vec<TermSpec> {
        self.terms
            .iter()
            .map(|m| {
                let mut x = vec![0; n];
                for &(v, p) in &m.x_pows {
                    x[v] = p;
                }
                TermSpec { field: field.to_string(), component: component + 1, coef: m.coef, x: Some(x), t: Some(m.t_pow) }
            })
            .collect()
    }
}

/// One coefficient term of a model specification. `field` is `"b"` or
/// `"sigma<j>"` and `component` is 1-based, like `j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TermSpec {
    pub field: String,
    pub component: usize,
    pub coef: f64,
    /// Exponents of `x_1 … x_n`; all zero when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x: Option<Vec<u32>>,
    /// Exponent of `t`; zero when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t: Option<u32>,
}

/// Declarative polynomial model, e.g. in TOML:
///
/// ```toml
/// n = 2
/// d = 2
/// [[terms]]
/// field = "sigma1"
/// component = 1
/// coef = 1.0
/// [[terms]]
/// field = "sigma2"
/// component = 2
/// coef = 1.0
/// x = [1, 0]
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub n: usize,
    pub d: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kappa: Option<f64>,
    #[serde(default)]
    pub terms: Vec<TermSpec>,
}

impl ModelSpec {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::ModelSpec(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("model spec serializes")
    }
}

/// A model whose coefficients are polynomials in `(t, x)`. All derivatives
/// are exact and precomputed at construction.
#[derive(Debug, Clone)]
pub struct PolynomialModel {
    name: String,
    n: usize,
    d: usize,
    kappa: Option<f64>,
    sigma: Vec<Vec<Polynomial>>,
    drift: Vec<Polynomial>,
    jac_sigma: Vec<Vec<Polynomial>>,
    hess_sigma: Vec<Vec<Polynomial>>,
    dt_sigma: Vec<Vec<Polynomial>>,
    jac_drift: Vec<Polynomial>,
    ito_drift: Vec<Polynomial>,
}

impl PolynomialModel {
    /// `sigma[j][a]` is component `a` of `σ_j`; `drift[a]` component `a` of `b`.
    pub fn new(name: impl Into<String>, sigma: Vec<Vec<Polynomial>>, drift: Vec<Polynomial>) -> Result<Self> {
        let n = drift.len();
        let d = sigma.len();
        if n == 0 || d == 0 {
            return Err(Error::ModelSpec("n and d must be positive".into()));
        }
        if let Some(bad) = sigma.iter().position(|s| s.len() != n) {
            return Err(Error::ModelSpec(format!("sigma{} has {} components, expected {n}", bad + 1, sigma[bad].len())));
        }

        let jac = |f: &[Polynomial]| -> Vec<Polynomial> {
            let mut out = Vec::with_capacity(n * n);
            for comp in f {
                for b in 0..n {
                    out.push(comp.d_dx(b));
                }
            }
            out
        };
        let jac_sigma: Vec<Vec<Polynomial>> = sigma.iter().map(|s| jac(s)).collect();
        let hess_sigma = jac_sigma.iter().map(|j| jac(j)).collect();
        let dt_sigma = sigma.iter().map(|s| s.iter().map(Polynomial::d_dt).collect()).collect();
        let jac_drift = jac(&drift);

        let mut ito_drift = drift.clone();
        for (s, js) in sigma.iter().zip(&jac_sigma) {
            for a in 0..n {
                for b in 0..n {
                    let term = js[a * n + b].mul(&s[b]).scale(0.5);
                    ito_drift[a] = ito_drift[a].add(&term);
                }
            }
        }

        Ok(Self {
            name: name.into(),
            n,
            d,
            kappa: None,
            sigma,
            drift,
            jac_sigma,
            hess_sigma,
            dt_sigma,
            jac_drift,
            ito_drift,
        })
    }

    pub fn with_kappa(mut self, kappa: f64) -> Self {
        self.kappa = Some(kappa);
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn sigma_polys(&self) -> &[Vec<Polynomial>] {
        &self.sigma
    }

    pub fn drift_polys(&self) -> &[Polynomial] {
        &self.drift
    }

    /// Largest total degree over all coefficients.
    pub fn degree(&self) -> u32 {
        self.sigma.iter().flatten().chain(&self.drift).map(Polynomial::degree).max().unwrap_or(0)
    }

    pub fn from_spec(name: impl Into<String>, spec: &ModelSpec) -> Result<Self> {
        let (n, d) = (spec.n, spec.d);
        if n == 0 || d == 0 {
            return Err(Error::ModelSpec("n and d must be positive".into()));
        }
        let mut sigma = vec![vec![Polynomial::zero(); n]; d];
        let mut drift = vec![Polynomial::zero(); n];
        for (k, term) in spec.terms.iter().enumerate() {
            let where_ = || format!("term {}", k + 1);
            if term.component == 0 || term.component > n {
                return Err(Error::ModelSpec(format!("{}: component {} outside 1..={n}", where_(), term.component)));
            }
            if !term.coef.is_finite() {
                return Err(Error::ModelSpec(format!("{}: non-finite coefficient", where_())));
            }
            let exps = term.x.clone().unwrap_or_else(|| vec![0; n]);
            if exps.len() != n {
                return Err(Error::ModelSpec(format!("{}: exponent list has length {}, expected {n}", where_(), exps.len())));
            }
            let poly = Polynomial::monomial(term.coef, term.t.unwrap_or(0), &exps);
            let slot = if term.field == "b" {
                &mut drift[term.component - 1]
            } else if let Some(j) = term.field.strip_prefix("sigma").and_then(|s| s.parse::<usize>().ok()) {
                if j == 0 || j > d {
                    return Err(Error::ModelSpec(format!("{}: field sigma{j} outside sigma1..=sigma{d}", where_())));
                }
                &mut sigma[j - 1][term.component - 1]
            } else {
                return Err(Error::ModelSpec(format!("{}: unknown field `{}`", where_(), term.field)));
            };
            *slot = slot.add(&poly);
        }
        let model = Self::new(name, sigma, drift)?;
        Ok(match spec.kappa {
            Some(k) => model.with_kappa(k),
            None => model,
        })
    }

    pub fn to_spec(&self) -> ModelSpec {
        let mut terms = Vec::new();
        for (j, s) in self.sigma.iter().enumerate() {
            for (a, p) in s.iter().enumerate() {
                terms.extend(p.to_terms(&format!("sigma{}", j + 1), a, self.n));
            }
        }
        for (a, p) in self.drift.iter().enumerate() {
            terms.extend(p.to_terms("b", a, self.n));
        }
        ModelSpec { n: self.n, d: self.d, kappa: self.kappa, terms }
    }

    /// Random model with affine coefficients `σ_j(x) = c_j + M_j x`,
    /// `b(x) = c_0 + M_0 x`, entries uniform in `[-scale, scale]`.
    pub fn random_affine<R: Rng + ?Sized>(n: usize, d: usize, scale: f64, rng: &mut R) -> Self {
        let affine = |rng: &mut R| -> Vec<Polynomial> {
            (0..n)
                .map(|_| {
                    let mut p = Polynomial::constant(rng.random_range(-scale..=scale));
                    for v in 0..n {
                        let mut e = vec![0; n];
                        e[v] = 1;
                        p = p.add(&Polynomial::monomial(rng.random_range(-scale..=scale), 0, &e));
                    }
                    p
                })
                .collect()
        };
        let sigma = (0..d).map(|_| affine(rng)).collect();
        let drift = affine(rng);
        Self::new("random-affine", sigma, drift).expect("valid dimensions")
    }
}

#[inline]
fn eval_into(polys: &[Polynomial], t: f64, x: &[f64], out: &mut [f64]) {
    for (o, p) in out.iter_mut().zip(polys) {
        *o = p.eval(t, x);
    }
}

impl VectorFieldModel for PolynomialModel {
    fn dim(&self) -> usize {
        self.n
    }

    fn noise_dim(&self) -> usize {
        self.d
    }

    #[inline]
    fn sigma(&self, j: usize, t: f64, x: &[f64], out: &mut [f64]) {
        eval_into(&self.sigma[j], t, x, out);
    }

    #[inline]
    fn drift(&self, t: f64, x: &[f64], out: &mut [f64]) {
        eval_into(&self.drift, t, x, out);
    }

    fn sigma_jacobian(&self, j: usize, t: f64, x: &[f64], out: &mut [f64]) {
        eval_into(&self.jac_sigma[j], t, x, out);
    }

    fn drift_jacobian(&self, t: f64, x: &[f64], out: &mut [f64]) {
        eval_into(&self.jac_drift, t, x, out);
    }

    fn sigma_hessian(&self, j: usize, t: f64, x: &[f64], out: &mut [f64]) {
        eval_into(&self.hess_sigma[j], t, x, out);
    }

    fn sigma_time_derivative(&self, j: usize, t: f64, x: &[f64], out: &mut [f64]) {
        eval_into(&self.dt_sigma[j], t, x, out);
    }

    #[inline]
    fn ito_drift(&self, t: f64, x: &[f64], out: &mut [f64]) {
        eval_into(&self.ito_drift, t, x, out);
    }

    fn derivative_order(&self) -> usize {
        usize::MAX
    }

    fn kappa(&self) -> Option<f64> {
        self.kappa
    }
}

/// Names accepted by [`builtin_model`].
pub const BUILTIN_MODELS: &[&str] = &["heisenberg", "grushin", "heisenberg-t", "elliptic", "heisenberg-drift"];

fn heisenberg_sigma(time_factor: bool) -> Vec<Vec<Polynomial>> {
    // (1 + t/2) multiplier for the time-dependent variant
    let f = |c: f64, exps: &[u32]| {
        let p = Polynomial::monomial(c, 0, exps);
        if time_factor {
            p.add(&Polynomial::monomial(0.5 * c, 1, exps))
        } else {
            p
        }
    };
    vec![
        vec![f(1.0, &[0, 0, 0]), Polynomial::zero(), f(-0.5, &[0, 1, 0])],
        vec![Polynomial::zero(), f(1.0, &[0, 0, 0]), f(0.5, &[1, 0, 0])],
    ]
}

/// Built-in models:
///
/// * `heisenberg`: `σ₁ = (1, 0, −x₂/2)`, `σ₂ = (0, 1, x₁/2)`, `b = 0`.
/// * `grushin`: `σ₁ = (1, 0)`, `σ₂ = (0, x₁)`, `b = 0`.
/// * `heisenberg-t`: Heisenberg fields scaled by `1 + t/2`.
/// * `elliptic`: `σ_j = e_j` in `R²`, `b = 0`.
/// * `heisenberg-drift`: Heisenberg with `b = (1, 0, 0)`.
pub fn builtin_model(name: &str) -> Result<PolynomialModel> {
    let zero3 = || vec![Polynomial::zero(); 3];
    let model = match name {
        "heisenberg" => PolynomialModel::new(name, heisenberg_sigma(false), zero3())?,
        "heisenberg-t" => PolynomialModel::new(name, heisenberg_sigma(true), zero3())?,
        "heisenberg-drift" => PolynomialModel::new(
            name,
            heisenberg_sigma(false),
            vec![Polynomial::constant(1.0), Polynomial::zero(), Polynomial::zero()],
        )?,
        "grushin" => PolynomialModel::new(
            name,
            vec![
                vec![Polynomial::constant(1.0), Polynomial::zero()],
                vec![Polynomial::zero(), Polynomial::monomial(1.0, 0, &[1, 0])],
            ],
            vec![Polynomial::zero(); 2],
        )?,
        "elliptic" => PolynomialModel::new(
            name,
            vec![
                vec![Polynomial::constant(1.0), Polynomial::zero()],
                vec![Polynomial::zero(), Polynomial::constant(1.0)],
            ],
            vec![Polynomial::zero(); 2],
        )?,
        other => return Err(Error::UnknownModel(other.to_string())),
    };
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::model::{fd_jacobian, lie_bracket};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn polynomial_calculus() {
        // p = 3 t x0^2 x1 + 2 x1 - 1
        let p = Polynomial::monomial(3.0, 1, &[2, 1])
            .add(&Polynomial::monomial(2.0, 0, &[0, 1]))
            .add(&Polynomial::constant(-1.0));
        let (t, x) = (0.5, [2.0, -3.0]);
        assert_eq!(p.eval(t, &x), 3.0 * 0.5 * 4.0 * -3.0 + 2.0 * -3.0 - 1.0);
        assert_eq!(p.d_dx(0).eval(t, &x), 6.0 * 0.5 * 2.0 * -3.0);
        assert_eq!(p.d_dx(1).eval(t, &x), 3.0 * 0.5 * 4.0 + 2.0);
        assert_eq!(p.d_dt().eval(t, &x), 3.0 * 4.0 * -3.0);
        let q = p.mul(&p);
        assert!((q.eval(t, &x) - p.eval(t, &x).powi(2)).abs() < 1e-9);
        assert!(p.add(&p.scale(-1.0)).is_zero());
        assert_eq!(p.degree(), 4);
    }

    #[test]
    fn builtin_heisenberg_coefficients() {
        let m = builtin_model("heisenberg").unwrap();
        let mut out = [0.0; 3];
        m.sigma(0, 0.0, &[1.0, 2.0, 3.0], &mut out);
        assert_eq!(out, [1.0, 0.0, -1.0]);
        m.sigma(1, 0.0, &[1.0, 2.0, 3.0], &mut out);
        assert_eq!(out, [0.0, 1.0, 0.5]);
        // ∂_{σ_j} σ_j = 0 for Heisenberg, so the Itô drift vanishes
        m.ito_drift(0.3, &[1.0, 2.0, 3.0], &mut out);
        assert_eq!(out, [0.0; 3]);
    }

    #[test]
    fn heisenberg_t_time_derivative() {
        let m = builtin_model("heisenberg-t").unwrap();
        let mut out = [0.0; 3];
        m.sigma(1, 1.0, &[2.0, 0.0, 0.0], &mut out);
        assert_eq!(out, [0.0, 1.5, 1.5]);
        m.sigma_time_derivative(1, 1.0, &[2.0, 0.0, 0.0], &mut out);
        assert_eq!(out, [0.0, 0.5, 0.5]);
    }

    #[test]
    fn unknown_builtin() {
        assert_eq!(builtin_model("nope").unwrap_err(), Error::UnknownModel("nope".into()));
    }

    #[test]
    fn spec_round_trip_preserves_coefficients() {
        for name in BUILTIN_MODELS {
            let m = builtin_model(name).unwrap();
            let spec = m.to_spec();
            let text = spec.to_toml();
            let back = ModelSpec::from_toml(&text).unwrap();
            assert_eq!(spec, back);
            let m2 = PolynomialModel::from_spec(*name, &back).unwrap();
            let x = [0.3, -0.7, 1.1][..m.dim()].to_vec();
            for j in 0..m.noise_dim() {
                let (mut a, mut b) = (vec![0.0; m.dim()], vec![0.0; m.dim()]);
                m.sigma(j, 0.4, &x, &mut a);
                m2.sigma(j, 0.4, &x, &mut b);
                assert_eq!(a, b);
            }
        }
    }

    #[test]
    fn spec_errors_name_the_term() {
        let text = r#"
            n = 2
            d = 1
            [[terms]]
            field = "sigma1"
            component = 1
            coef = 1.0
            [[terms]]
            field = "sigma3"
            component = 1
            coef = 1.0
        "#;
        let spec = ModelSpec::from_toml(text).unwrap();
        let err = PolynomialModel::from_spec("user", &spec).unwrap_err();
        assert!(err.to_string().contains("term 2"), "{err}");

        let bad_key = "n = 1\nd = 1\nfoo = 2\n";
        assert!(ModelSpec::from_toml(bad_key).is_err());
    }

    #[test]
    fn exact_derivatives_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let m = PolynomialModel::random_affine(3, 2, 1.0, &mut rng);
        let x = [0.2, -0.4, 0.9];
        for j in 0..2 {
            let mut exact = vec![0.0; 9];
            m.sigma_jacobian(j, 0.0, &x, &mut exact);
            let mut fd = vec![0.0; 9];
            fd_jacobian(|y, o| m.sigma(j, 0.0, y, o), 3, &x, 1e-5, &mut fd);
            for (a, b) in exact.iter().zip(&fd) {
                assert!((a - b).abs() < 1e-8);
            }
        }
        // brackets of affine fields: [c_i + M_i x, c_p + M_p x] = M_p σ_i − M_i σ_p
        let br = lie_bracket(&m, 0, 1, 0.0, &x).unwrap();
        assert!(br.iter().all(|v| v.is_finite()));
    }
}
