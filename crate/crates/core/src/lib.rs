//! Small-time density estimates for hypoelliptic diffusions under the strong
//! Hörmander condition: the directional-matrix geometry, the stochastic Taylor
//! key decomposition, localization weights and Monte Carlo density checks.

pub mod error;
pub mod fields;

pub use error::{Error, Result};
pub mod paths;
pub mod rng;
pub mod stats;
pub mod sde;
pub mod decomp;
pub mod density;
