//! Shared fixtures for the benchmarks.

use hypodens_core::decomp::EtaMap;
use hypodens_core::density::{sample_scaled_endpoints, Centering, DensityEstimate};
use hypodens_core::fields::builtin_model;
use nalgebra::DMatrix;

/// KDE over `n` scaled Heisenberg endpoints at `δ = 0.05`.
pub fn heisenberg_kde(n: u64) -> DensityEstimate {
    let m = builtin_model("heisenberg").expect("built in");
    let s = sample_scaled_endpoints(&m, &[0.0; 3], 0.05, n, 16, 1, Centering::X0).expect("non-degenerate");
    DensityEstimate::new(s, 1.0).expect("enough samples")
}

/// A fixed 4-dimensional quadratic map with a small linear part.
pub fn quadratic_map() -> EtaMap {
    let linear = DMatrix::from_fn(4, 4, |i, j| if i == j { 0.1 } else { 0.02 });
    let hess = (0..4)
        .map(|k| DMatrix::from_fn(4, 4, |i, j| 0.01 * ((i + j + k) % 3) as f64))
        .collect();
    EtaMap::new(linear, hess).expect("consistent shapes")
}
