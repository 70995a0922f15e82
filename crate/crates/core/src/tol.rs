//! Numerical tolerances shared by every operation and test.

/// Largest Hilbert-space dimension accepted by the dense linear algebra.
pub const MAX_DIM: usize = 16;

/// `| <psi|psi> - 1 |` allowed for a state asserted to be normalized.
pub const NORMALIZATION: f64 = 1e-9;

/// Tolerance for `is_hermitian` / `is_identity` / `is_diagonal` on operators.
pub const OPERATOR: f64 = 1e-12;

/// Hermiticity slack admitted for density matrices.
pub const DENSITY_HERMITIAN: f64 = 1e-10;

/// `| tr(rho) - 1 |` admitted for density matrices.
pub const DENSITY_TRACE: f64 = 1e-10;

/// Most negative eigenvalue admitted for density matrices.
pub const DENSITY_POSITIVITY: f64 = 1e-8;

/// Slack on the Bloch-ball radius.
pub const BLOCH_RADIUS: f64 = 1e-8;

/// Imaginary part admitted for the expectation of a Hermitian operator.
pub const HERMITIAN_EXPECTATION: f64 = 1e-10;

/// Norm slack for states stored along a nonlinear trajectory.
pub const TRAJECTORY_NORM: f64 = 1e-6;

/// Norms below this are treated as a degenerate (vanishing) state.
pub const DEGENERATE_NORM: f64 = 1e-12;

/// Overlaps below this modulus have no defined phase.
pub const ORTHOGONAL_OVERLAP: f64 = 1e-12;

/// Ensemble means with modulus below this report their phase as undefined.
pub const UNDEFINED_PHASE_MODULUS: f64 = 1e-6;

/// Slack on `t_final / dt` being an integer number of steps.
pub const STEP_COUNT: f64 = 1e-9;

/// Slack on initial-ensemble weights summing to one.
pub const ENSEMBLE_WEIGHTS: f64 = 1e-12;

/// Number of standard errors used by every statistical gate.
pub const SIGMA_BAND: f64 = 3.0;

/// Floor added to statistical bands whose standard error collapses to
/// rounding level (deterministic limits of a stochastic estimator).
pub const ROUNDING_FLOOR: f64 = 1e-12;
