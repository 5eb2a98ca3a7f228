use thiserror::Error;

/// Errors produced by the numerical routines of this crate.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// A coefficient callback returned a non-finite value.
    #[error("non-finite coefficient value for field {field} at t = {t}, x = {x:?}")]
    Evaluation { field: String, t: f64, x: Vec<f64> },

    #[error("invalid argument: {0}")]
    Argument(String),

    /// The directional matrix does not have full row rank.
    #[error("degenerate directional matrix: smallest singular value {lambda:e} (relative tolerance {tol:e})")]
    Degenerate { lambda: f64, tol: f64 },

    /// The SDE state became non-finite.
    #[error("SDE blow-up at grid index {index}")]
    BlowUp { index: usize },

    /// `Z_t Y_t` drifted away from the identity.
    #[error("tangent flow inverse error {error:e} exceeds tolerance {tol:e}; refine the grid")]
    FlowAccuracy { error: f64, tol: f64 },

    /// Key-decomposition residual far outside its fitted envelope.
    #[error("key-decomposition residual {residual:e} exceeds envelope {envelope:e}")]
    Decomposition { residual: f64, envelope: f64 },

    /// Input outside the domain of the local inverse.
    #[error("|y| = {norm:e} outside the admissible radius {radius:e}")]
    Domain { norm: f64, radius: f64 },

    #[error("fixed-point iteration did not converge after {iterations} iterations")]
    Convergence { iterations: usize },

    /// The model lacks closed-form derivatives an operation needs.
    #[error("model capability missing: {0}")]
    Capability(String),

    #[error("{failed} of {total} paths blew up")]
    DataQuality { failed: usize, total: usize },

    #[error("model specification: {0}")]
    ModelSpec(String),

    #[error("unknown model `{0}`")]
    UnknownModel(String),
}

pub type Result<T> = std::result::Result<T, Error>;
