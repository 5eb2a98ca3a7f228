use nalgebra::DVector;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::rng::path_rng;

/// Smallest accepted number of fine steps per sub-interval.
pub const MIN_STEPS_PER_SUB: usize = 8;

/// A `d`-dimensional Brownian path on `[0, δ]`, sampled on a uniform grid of
/// `N · d` steps so that every `s_k = kδ/d` is a grid point (index `k · N`).
#[derive(Debug, Clone, PartialEq)]
pub struct BrownianGrid {
    d: usize,
    delta: f64,
    steps_per_sub: usize,
    /// `(N·d + 1) × d`, row-major.
    values: Vec<f64>,
}

impl BrownianGrid {
    /// Path number `stream` of the family seeded by `seed`. The same
    /// `(seed, stream)` always gives the same path.
    pub fn sample(seed: u64, stream: u64, d: usize, delta: f64, steps_per_sub: usize) -> Result<Self> {
        let mut rng = path_rng(seed, stream);
        Self::sample_with(&mut rng, d, delta, steps_per_sub)
    }

    pub fn sample_with(rng: &mut ChaCha8Rng, d: usize, delta: f64, steps_per_sub: usize) -> Result<Self> {
        check_shape(d, delta, steps_per_sub)?;
        let steps = steps_per_sub * d;
        let sd = (delta / steps as f64).sqrt();
        let mut values = vec![0.0; (steps + 1) * d];
        for k in 0..steps {
            for i in 0..d {
                let z: f64 = rng.sample(StandardNormal);
                values[(k + 1) * d + i] = values[k * d + i] + sd * z;
            }
        }
        Ok(Self { d, delta, steps_per_sub, values })
    }

    /// Build a path from explicit fine-step increments (`N·d` rows of `d`).
    pub fn from_increments(d: usize, delta: f64, steps_per_sub: usize, increments: &[f64]) -> Result<Self> {
        check_shape(d, delta, steps_per_sub)?;
        let steps = steps_per_sub * d;
        if increments.len() != steps * d {
            return Err(Error::Argument(format!(
                "expected {} increments, got {}",
                steps * d,
                increments.len()
            )));
        }
        let mut values = vec![0.0; (steps + 1) * d];
        for k in 0..steps {
            for i in 0..d {
                values[(k + 1) * d + i] = values[k * d + i] + increments[k * d + i];
            }
        }
        Ok(Self { d, delta, steps_per_sub, values })
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn steps_per_sub(&self) -> usize {
        self.steps_per_sub
    }

    pub fn n_steps(&self) -> usize {
        self.steps_per_sub * self.d
    }

    /// Fine step `h = δ / (N d)`.
    pub fn step(&self) -> f64 {
        self.delta / self.n_steps() as f64
    }

    /// `W` at grid index `k`.
    #[inline]
    pub fn w(&self, k: usize) -> &[f64] {
        &self.values[k * self.d..(k + 1) * self.d]
    }

    /// `W_{k+1} − W_k`.
    #[inline]
    pub fn dw(&self, k: usize, i: usize) -> f64 {
        self.values[(k + 1) * self.d + i] - self.values[k * self.d + i]
    }

    pub fn endpoint(&self) -> &[f64] {
        self.w(self.n_steps())
    }

    /// Grid index of `s_p` (0-based `p`, so sub-interval `p` spans
    /// `sub_start(p)..sub_start(p + 1)`).
    pub fn sub_start(&self, p: usize) -> usize {
        p * self.steps_per_sub
    }

    /// Rescaled path `B_t = δ^{-1/2} W_{tδ}` at grid index `k`, coordinate `i`.
    #[inline]
    pub fn b(&self, k: usize, i: usize) -> f64 {
        self.values[k * self.d + i] / self.delta.sqrt()
    }

    /// Iterated integrals over each sub-interval.
    pub fn increments_and_iterated(&self) -> Increments {
        let d = self.d;
        let mut delta = vec![0.0; d * d];
        let mut iterated = vec![0.0; d * d * d];
        for k in 0..d {
            let (s, e) = (self.sub_start(k), self.sub_start(k + 1));
            let w0 = self.w(s).to_vec();
            for i in 0..d {
                delta[k * d + i] = self.w(e)[i] - w0[i];
            }
            for step in s..e {
                let w = self.w(step);
                for i in 0..d {
                    let lead = w[i] - w0[i];
                    for j in 0..d {
                        if i != j {
                            iterated[(k * d + i) * d + j] += lead * self.dw(step, j);
                        }
                    }
                }
            }
            for i in 0..d {
                iterated[(k * d + i) * d + i] = 0.5 * delta[k * d + i] * delta[k * d + i];
            }
        }
        Increments { d, delta, iterated }
    }

    /// `∫_0^δ W^i ∘ dW^j` over the whole horizon, `d × d` row-major. The
    /// diagonal is `(W_δ^i)²/2`; off-diagonal entries are left-point sums.
    pub fn full_iterated(&self) -> Vec<f64> {
        let d = self.d;
        let mut out = vec![0.0; d * d];
        for step in 0..self.n_steps() {
            let w = self.w(step);
            for i in 0..d {
                for j in 0..d {
                    if i != j {
                        out[i * d + j] += w[i] * self.dw(step, j);
                    }
                }
            }
        }
        let end = self.endpoint();
        for i in 0..d {
            out[i * d + i] = 0.5 * end[i] * end[i];
        }
        out
    }
}

fn check_shape(d: usize, delta: f64, steps_per_sub: usize) -> Result<()> {
    if d == 0 {
        return Err(Error::Argument("d must be positive".into()));
    }
    if !(delta > 0.0 && delta.is_finite()) {
        return Err(Error::Argument(format!("delta must be positive, got {delta}")));
    }
    if steps_per_sub < MIN_STEPS_PER_SUB {
        return Err(Error::Argument(format!(
            "steps_per_sub must be at least {MIN_STEPS_PER_SUB}, got {steps_per_sub}"
        )));
    }
    Ok(())
}

/// Path `0` of the family seeded by `seed`.
pub fn sample_path(seed: u64, d: usize, delta: f64, steps_per_sub: usize) -> Result<BrownianGrid> {
    BrownianGrid::sample(seed, 0, d, delta, steps_per_sub)
}

/// Sub-interval increments `Δ_k^i` and iterated integrals `Δ_k^{i,j}`, all
/// 0-based.
#[derive(Debug, Clone, PartialEq)]
pub struct Increments {
    d: usize,
    delta: Vec<f64>,
    iterated: Vec<f64>,
}

impl Increments {
    pub fn d(&self) -> usize {
        self.d
    }

    /// `Δ_k^i`.
    #[inline]
    pub fn delta(&self, k: usize, i: usize) -> f64 {
        self.delta[k * self.d + i]
    }

    /// `Δ_k^{i,j} = ∫_{s_k}^{s_{k+1}} (W^i − W^i_{s_k}) ∘ dW^j`.
    #[inline]
    pub fn iterated(&self, k: usize, i: usize, j: usize) -> f64 {
        self.iterated[(k * self.d + i) * self.d + j]
    }
}

pub fn increments_and_iterated(path: &BrownianGrid) -> Increments {
    path.increments_and_iterated()
}

/// `Θ ∈ R^{d²}`: `Θ_{l(i,p)} = Δ_p^{i,p}/δ` for `i ≠ p` and `Δ_p^p/√δ` on the
/// diagonal.
pub fn theta_vector(inc: &Increments, delta: f64) -> DVector<f64> {
    let d = inc.d;
    DVector::from_fn(d * d, |l, _| {
        let (p, i) = (l / d, l % d);
        if i == p {
            inc.delta(p, p) / delta.sqrt()
        } else {
            inc.iterated(p, i, p) / delta
        }
    })
}

/// `Δ(δ, W) ∈ R^{d²}`: `Δ_p^{i,p}` off the diagonal, `Δ_p^p` on it.
pub fn delta_vector(inc: &Increments) -> DVector<f64> {
    let d = inc.d;
    DVector::from_fn(d * d, |l, _| {
        let (p, i) = (l / d, l % d);
        if i == p {
            inc.delta(p, p)
        } else {
            inc.iterated(p, i, p)
        }
    })
}
