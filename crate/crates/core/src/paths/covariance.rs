use nalgebra::{DMatrix, SymmetricEigen};

use super::grid::BrownianGrid;

/// Conditional covariance of `Θ` given the off-block coordinates: `d` blocks
/// `Q_p` of size `d × d`, assembled block-diagonally into the `d² × d²` matrix
/// `Q`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionalCovariance {
    blocks: Vec<DMatrix<f64>>,
}

impl ConditionalCovariance {
    pub fn from_blocks(blocks: Vec<DMatrix<f64>>) -> Self {
        Self { blocks }
    }

    pub fn d(&self) -> usize {
        self.blocks.len()
    }

    pub fn blocks(&self) -> &[DMatrix<f64>] {
        &self.blocks
    }

    pub fn full(&self) -> DMatrix<f64> {
        let d = self.d();
        let mut q = DMatrix::zeros(d * d, d * d);
        for (p, b) in self.blocks.iter().enumerate() {
            q.view_mut((p * d, p * d), (d, d)).copy_from(b);
        }
        q
    }

    pub fn det_blocks(&self) -> Vec<f64> {
        self.blocks.iter().map(|b| b.determinant()).collect()
    }

    /// `det Q = Π_p det Q_p`.
    pub fn det(&self) -> f64 {
        self.det_blocks().iter().product()
    }

    /// `(λ_*(Q), λ^*(Q))`, the extreme eigenvalues over all blocks.
    pub fn eigen_extremes(&self) -> (f64, f64) {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for b in &self.blocks {
            for &v in SymmetricEigen::new(b.clone()).eigenvalues.iter() {
                lo = lo.min(v);
                hi = hi.max(v);
            }
        }
        (lo, hi)
    }

    /// `|Q|_l = (m⁻¹ Σ Q_{ij}²)^{1/2}` over the full `m × m` matrix.
    pub fn frobenius_scaled(&self) -> f64 {
        let m = (self.d() * self.d()) as f64;
        let ss: f64 = self.blocks.iter().map(|b| b.norm_squared()).sum();
        (ss / m).sqrt()
    }
}

/// Blocks of the conditional covariance from the rescaled path on the unit
/// horizon. Row/column `i` of block `p` pairs with `Θ_{l(i,p)}`.
///
/// Integrals are left-point sums on the fine grid, which is exactly the
/// conditional covariance of the discretized `Θ`.
pub fn conditional_covariance(path: &BrownianGrid) -> ConditionalCovariance {
    let d = path.d();
    let n = path.steps_per_sub();
    let hb = 1.0 / (d * n) as f64;
    let blocks = (0..d)
        .map(|p| {
            let start = path.sub_start(p);
            let mut q = DMatrix::zeros(d, d);
            let mut dev = vec![0.0; d];
            for k in start..start + n {
                for (j, v) in dev.iter_mut().enumerate() {
                    *v = path.b(k, j) - path.b(start, j);
                }
                for i in 0..d {
                    if i == p {
                        continue;
                    }
                    q[(p, i)] += hb * dev[i];
                    for j in i..d {
                        if j != p {
                            q[(i, j)] += hb * dev[i] * dev[j];
                        }
                    }
                }
            }
            for i in 0..d {
                for j in 0..i {
                    if i == p {
                        q[(j, p)] = q[(p, j)];
                    } else if j == p {
                        q[(i, p)] = q[(p, i)];
                    } else {
                        q[(i, j)] = q[(j, i)];
                    }
                }
            }
            q[(p, p)] = 1.0 / d as f64;
            q
        })
        .collect();
    ConditionalCovariance { blocks }
}
