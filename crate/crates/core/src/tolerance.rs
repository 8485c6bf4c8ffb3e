//! Numerical thresholds shared by every rank, spectrum and sign test.
//!
//! The convergence conditions are exact statements; these constants decide how
//! floating-point results are mapped onto them. Reports surface them so a
//! borderline verdict can be traced back to the threshold that decided it.

/// Singular values below `RANK_RTOL * sigma_max` count as zero.
pub const RANK_RTOL: f64 = 1e-10;

/// Absolute floor for the rank threshold, so an all-roundoff matrix has rank 0.
pub const RANK_ATOL: f64 = 1e-14;

/// Eigenvalues closer than this are one eigenvalue for multiplicity counting.
pub const EIG_CLUSTER: f64 = 1e-8;

/// `| |lambda| - 1 | <= UNIT_CIRCLE` puts an eigenvalue on the unit circle.
pub const UNIT_CIRCLE: f64 = 1e-8;

/// Entries `>= -NONNEG` count as nonnegative.
pub const NONNEG: f64 = 1e-10;

/// A decisive eigenvalue this close to the unit circle (or to the imaginary
/// axis) makes a verdict marginal instead of a hard call.
pub const MARGINAL: f64 = 1e-6;

/// Row sums of a stochastic matrix must be within this of 1.
pub const STOCHASTIC: f64 = 1e-10;

/// `||mu^T P - mu^T||_inf` below this is on-policy.
pub const ON_POLICY: f64 = 1e-9;

/// Residual threshold for linear realizability and consistent-solution checks.
pub const REALIZABLE: f64 = 1e-8;
