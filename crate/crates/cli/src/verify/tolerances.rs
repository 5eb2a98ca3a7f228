//! Pass thresholds and sample sizes of the acceptance suite, in one place.

/// Density protocol shared by the diagonal, lower-bound and tail criteria.
pub const DELTA_GRID: [f64; 5] = [0.02, 0.04, 0.08, 0.12, 0.2];
pub const DENSITY_PATHS: u64 = 200_000;
pub const DENSITY_STEPS: usize = 256;

/// Half-width on the diagonal slope for the hypoelliptic models.
pub const DIAGONAL_SLOPE_TOL: f64 = 0.15;
/// Half-width on the diagonal slope for the Gaussian control.
pub const ELLIPTIC_SLOPE_TOL: f64 = 0.1;

pub const KEY_MODELS: u64 = 1000;
pub const KEY_CALIBRATION_MODELS: u64 = 100;
pub const KEY_DELTA: f64 = 0.05;
pub const KEY_COARSE_STEPS: usize = 256;
pub const KEY_FINE_STEPS: usize = 1024;
/// Residual-to-envelope ratio beyond which a residual counts as outside.
pub const KEY_ENVELOPE_FACTOR: f64 = 10.0;
/// RMS ratio between the two step counts for a half-order error.
pub const KEY_REFINEMENT_RATIO: f64 = 2.0;
pub const KEY_REFINEMENT_TOL: f64 = 0.3;

pub const REMAINDER_PATHS: u64 = 10_000;
pub const REMAINDER_STEPS: usize = 256;
pub const REMAINDER_SLOPE: f64 = 1.5;
pub const REMAINDER_SLOPE_TOL: f64 = 0.2;

pub const IDENTITY_CASES: u64 = 1000;
pub const IDENTITY_TOL: f64 = 1e-10;
pub const BRACKET_TOL: f64 = 1e-12;

pub const INVERSION_CASES: u64 = 1000;
pub const INVERSION_DIMS: [usize; 3] = [1, 2, 4];
pub const FIXED_POINT_TOL: f64 = 1e-9;
pub const CLOSED_FORM_TOL: f64 = 1e-10;

pub const SANDWICH_SAMPLES: u64 = 100_000;
pub const SANDWICH_POINTS: usize = 20;
pub const SANDWICH_RADIUS: f64 = 0.35;
pub const SANDWICH_HALF_WIDTH: f64 = 0.05;

pub const SUPPORT_SAMPLES: u64 = 1_000_000;
pub const SUPPORT_EPS: [f64; 4] = [0.1, 0.2, 0.3, 0.4];
/// Large enough that `det Q ≥ ε^ρ` and `sup|B| ≤ ε^{-ρ}` do not bind on the grid.
pub const SUPPORT_RHO: f64 = 4.0;
pub const SUPPORT_STEPS: usize = 128;
pub const SUPPORT_SLOPE_MAX: f64 = 3.5;

pub const LAMBDA_DELTAS: [f64; 4] = [0.01, 0.05, 0.1, 0.2];
pub const LAMBDA_PATHS: u64 = 10_000;
pub const LAMBDA_STEPS: usize = 64;
pub const LAMBDA_MEDIAN_SPREAD: f64 = 5.0;
/// Fixed floor for the 5% quantile of `λ_*(γ̄_F)`.
pub const LAMBDA_Q05_FLOOR: f64 = 1e-2;

pub const LOWER_RADIUS: f64 = 0.5;
pub const LOWER_RATIO_MIN: f64 = 0.5;

pub const TAIL_P: f64 = 4.0;
pub const TAIL_VARIATION_MAX: f64 = 10.0;
pub const TAIL_RECENTERING_MAX: f64 = 3.0;
