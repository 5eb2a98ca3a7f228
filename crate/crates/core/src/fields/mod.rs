//! Coefficient models, Lie brackets and the directional-matrix geometry.

mod matrix;
mod model;
mod poly;

pub use matrix::{
    alpha_factor, aniso_norm, col_index, dim_span_sigma, directional_matrix, gamma_extension, hoermander_lambda,
    scale_matrix, AlphaFactor, DirectionalMatrix, GammaExtension, RANK_TOL,
};
pub use model::{
    bracket_jacobian, directional_derivative, eval_drift, eval_drift_jacobian, eval_sigma, eval_sigma_jacobian,
    fd_jacobian, growth_ratio, lie_bracket, FnModel, VectorFieldModel, DEFAULT_FD_STEP,
};
pub(crate) use model::contract_hessian;
pub use poly::{builtin_model, ModelSpec, Polynomial, PolynomialModel, TermSpec, BUILTIN_MODELS};
