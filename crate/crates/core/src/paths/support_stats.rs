//! Monte Carlo probabilities of the support events and inverse moments of the
//! unit-horizon covariance determinant.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::covariance::conditional_covariance;
use super::grid::BrownianGrid;
use super::support::{support_quantities, QpConvention};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, path_rng};
use crate::stats::{log_log_fit, wilson_interval, LineFit, NeumaierSum};

/// Functionals of a `(d−1)`-dimensional Brownian path `B` on `[0, 1]`
/// together with one extra coordinate `B^d`.
#[derive(Debug, Clone, PartialEq)]
pub struct UnitHorizonSample {
    /// `d × d`: `Q^{dd} = 1`, `Q^{dj} = ∫B^j`, `Q^{jp} = ∫B^j B^p`.
    pub q: DMatrix<f64>,
    pub det_q: f64,
    /// `sup_t |B_t|` over the grid.
    pub sup_norm: f64,
    /// `Σ_i |B_1^i| + Σ_j |∫ B^j dB^d|`.
    pub q_b: f64,
}

/// Draw one unit-horizon sample with `steps` fine steps.
pub fn unit_horizon_sample<R: Rng + ?Sized>(rng: &mut R, d: usize, steps: usize) -> UnitHorizonSample {
    let k = d - 1;
    let h = 1.0 / steps as f64;
    let sd = h.sqrt();
    let mut b = vec![0.0; k];
    let mut mean = vec![0.0; k];
    let mut second = vec![0.0; k * k];
    let mut cross = vec![0.0; k];
    let mut sup_sq: f64 = 0.0;
    for _ in 0..steps {
        for j in 0..k {
            mean[j] += h * b[j];
            for p in j..k {
                second[j * k + p] += h * b[j] * b[p];
            }
        }
        let dwd: f64 = sd * rng.sample::<f64, _>(StandardNormal);
        for j in 0..k {
            cross[j] += b[j] * dwd;
        }
        for bj in b.iter_mut() {
            *bj += sd * rng.sample::<f64, _>(StandardNormal);
        }
        sup_sq = sup_sq.max(b.iter().map(|v| v * v).sum());
    }
    let mut q = DMatrix::zeros(d, d);
    q[(k, k)] = 1.0;
    for j in 0..k {
        q[(k, j)] = mean[j];
        q[(j, k)] = mean[j];
        for p in j..k {
            q[(j, p)] = second[j * k + p];
            q[(p, j)] = second[j * k + p];
        }
    }
    let det_q = q.determinant();
    let q_b = b.iter().map(|v| v.abs()).sum::<f64>() + cross.iter().map(|v| v.abs()).sum::<f64>();
    UnitHorizonSample { q, det_q, sup_norm: sup_sq.sqrt(), q_b }
}

impl UnitHorizonSample {
    /// `det Q ≥ ε^ρ`, `sup|B| ≤ ε^{-ρ}` and `q(B) ≤ ε`.
    pub fn in_upsilon(&self, eps: f64, rho: f64) -> bool {
        self.det_q >= eps.powf(rho) && self.sup_norm <= eps.powf(-rho) && self.q_b <= eps
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupportConfig {
    pub d: usize,
    pub eps_grid: Vec<f64>,
    pub rho: f64,
    pub n_samples: u64,
    pub seed: u64,
    /// Fine steps on the unit horizon (per block for the block event).
    pub steps: usize,
    /// Also estimate the block event, which needs a second, `d`-dimensional
    /// path per sample.
    pub include_lambda: bool,
    pub qp_convention: QpConvention,
}

impl Default for SupportConfig {
    fn default() -> Self {
        Self {
            d: 2,
            eps_grid: vec![0.1, 0.2, 0.3, 0.4],
            rho: 1.0,
            n_samples: 100_000,
            seed: 1,
            steps: 128,
            include_lambda: false,
            qp_convention: QpConvention::PBlock,
        }
    }
}

/// One row of a frequency table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrequencyRow {
    pub epsilon: f64,
    pub n: u64,
    pub hits: u64,
    pub p_hat: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
}

impl FrequencyRow {
    fn new(epsilon: f64, hits: u64, n: u64) -> Self {
        let (ci_lo, ci_hi) = wilson_interval(hits, n);
        Self { epsilon, n, hits, p_hat: hits as f64 / n as f64, ci_lo, ci_hi }
    }

    /// No hits: excluded from slope fits.
    pub fn censored(&self) -> bool {
        self.hits == 0
    }

    /// Strictly inside `(0, 1)` with a non-empty interval.
    pub fn nondegenerate(&self) -> bool {
        self.hits > 0 && self.hits < self.n && self.ci_lo > 0.0 && self.ci_hi > self.ci_lo
    }
}

/// Frequencies per `ε` and the log–log slope over uncensored rows.
#[derive(Debug, Clone, PartialEq)]
pub struct FrequencyTable {
    pub rows: Vec<FrequencyRow>,
    pub slope: Option<LineFit>,
}

impl FrequencyTable {
    fn from_counts(eps: &[f64], hits: &[u64], n: u64) -> Self {
        let rows: Vec<FrequencyRow> = eps.iter().zip(hits).map(|(&e, &h)| FrequencyRow::new(e, h, n)).collect();
        let kept: Vec<&FrequencyRow> = rows.iter().filter(|r| !r.censored()).collect();
        let x: Vec<f64> = kept.iter().map(|r| r.epsilon).collect();
        let y: Vec<f64> = kept.iter().map(|r| r.p_hat).collect();
        Self { slope: log_log_fit(&x, &y), rows }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SupportStatistics {
    pub upsilon: FrequencyTable,
    pub lambda: Option<FrequencyTable>,
}

/// Monte Carlo probabilities of the unit-horizon support event and, on
/// request, of the block event on the `d`-dimensional path.
pub fn support_statistics(config: &SupportConfig) -> Result<SupportStatistics> {
    if config.d < 2 {
        return Err(Error::Argument("support statistics need d ≥ 2".into()));
    }
    if config.eps_grid.is_empty() || config.eps_grid.iter().any(|&e| !(e > 0.0 && e <= 1.0)) {
        return Err(Error::Argument("eps_grid must be non-empty with values in (0, 1]".into()));
    }
    if !(config.rho > 0.0) || config.n_samples == 0 || config.steps < 8 {
        return Err(Error::Argument("rho > 0, n_samples > 0 and steps ≥ 8 required".into()));
    }
    let ne = config.eps_grid.len();
    let lambda_seed = derive_seed(config.seed, 1);
    let counts = (0..config.n_samples)
        .into_par_iter()
        .map(|idx| {
            let mut c = vec![0u64; 2 * ne];
            let mut rng = path_rng(config.seed, idx);
            let s = unit_horizon_sample(&mut rng, config.d, config.steps);
            for (e, &eps) in config.eps_grid.iter().enumerate() {
                c[e] = s.in_upsilon(eps, config.rho) as u64;
            }
            if config.include_lambda {
                let path = BrownianGrid::sample(lambda_seed, idx, config.d, 1.0, config.steps)
                    .expect("validated shape");
                let cov = conditional_covariance(&path);
                let sup = support_quantities(&path, config.qp_convention);
                let dets = cov.det_blocks();
                for (e, &eps) in config.eps_grid.iter().enumerate() {
                    let hit = (0..config.d).all(|p| {
                        dets[p] >= eps.powf(config.rho)
                            && sup.sup_terms[p] <= eps.powf(-config.rho)
                            && sup.q_p[p] <= eps
                    });
                    c[ne + e] = hit as u64;
                }
            }
            c
        })
        .reduce(
            || vec![0u64; 2 * ne],
            |mut a, b| {
                a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
                a
            },
        );
    let upsilon = FrequencyTable::from_counts(&config.eps_grid, &counts[..ne], config.n_samples);
    let lambda = config
        .include_lambda
        .then(|| FrequencyTable::from_counts(&config.eps_grid, &counts[ne..], config.n_samples));
    Ok(SupportStatistics { upsilon, lambda })
}

/// Sample mean of `|det Q|^{-p}` with the means of the two halves.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MomentRow {
    pub p: f64,
    pub n: u64,
    pub mean: f64,
    pub half1: f64,
    pub half2: f64,
}

impl MomentRow {
    /// Relative gap between the halves.
    pub fn split_gap(&self) -> f64 {
        (self.half1 - self.half2).abs() / self.mean.abs().max(f64::MIN_POSITIVE)
    }
}

/// Inverse moments of `det Q` for the unit-horizon covariance, all powers
/// evaluated on the same sample.
pub fn detq_inverse_moments(d: usize, powers: &[f64], n_samples: u64, seed: u64, steps: usize) -> Result<Vec<MomentRow>> {
    if d == 0 || n_samples < 2 || steps < 8 {
        return Err(Error::Argument("d ≥ 1, n_samples ≥ 2 and steps ≥ 8 required".into()));
    }
    let dets: Vec<f64> = (0..n_samples)
        .into_par_iter()
        .map(|idx| {
            if d == 1 {
                1.0
            } else {
                unit_horizon_sample(&mut path_rng(seed, idx), d, steps).det_q.abs()
            }
        })
        .collect();
    let half = dets.len() / 2;
    Ok(powers
        .iter()
        .map(|&p| {
            let mean_of = |xs: &[f64]| {
                let mut acc = NeumaierSum::new();
                xs.iter().for_each(|v| acc.add(v.powf(-p)));
                acc.value() / xs.len() as f64
            };
            MomentRow { p, n: n_samples, mean: mean_of(&dets), half1: mean_of(&dets[..half]), half2: mean_of(&dets[half..]) }
        })
        .collect())
}
