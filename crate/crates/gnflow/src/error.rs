//! Error type shared across the crate.
//!
//! Numerical routines distinguish a genuinely singular preconditioner (a
//! meaningful event: the trajectory left the region where the Gram matrix
//! keeps its spectral floor) from plain argument or data errors.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Incompatible dimensions between operands.
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    /// A NaN or infinity showed up where finite values are required.
    #[error("non-finite value in {0}")]
    NonFinite(String),

    /// The undamped Gram matrix is rank-deficient (relative to the singular
    /// tolerance), so `H_0 = DᵀD` cannot be inverted. Flow drivers treat this
    /// as an exit event rather than a crash.
    #[error("singular preconditioner: lambda_min = {lambda_min:.6e} <= tolerance relative to lambda_max = {lambda_max:.6e}")]
    SingularPreconditioner { lambda_min: f64, lambda_max: f64 },

    /// An argument violated a documented precondition.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Configuration file could not be parsed or failed validation.
    #[error("config error: {0}")]
    Config(String),

    /// Dataset loading or validation failure (missing column, non-numeric
    /// cell, zero-variance feature, ...).
    #[error("data error: {0}")]
    Data(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit code for the CLI: config/data problems are exit code 1.
    /// (Invariant-suite failures are exit code 2, handled by the harness.)
    pub fn exit_code(&self) -> i32 {
        1
    }
}

/// Finite and strictly positive (NaN and infinities rejected).
pub(crate) fn is_positive(v: f64) -> bool {
    v.is_finite() && v > 0.0
}

/// Finite and nonnegative (NaN and infinities rejected).
pub(crate) fn is_nonnegative(v: f64) -> bool {
    v.is_finite() && v >= 0.0
}

/// Strictly inside (0, 1); NaN rejected.
pub(crate) fn in_open_unit(v: f64) -> bool {
    v > 0.0 && v < 1.0
}

/// Inside (0, 1]; NaN rejected.
pub(crate) fn in_half_open_unit(v: f64) -> bool {
    v > 0.0 && v <= 1.0
}
