//! Error type shared by all core modules.

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, CoreError>;

#[derive(Debug, Clone, thiserror::Error)]
pub enum CoreError {
    /// A parameter violated its documented invariant.
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    /// Vector or matrix dimensions do not conform.
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    /// Not enough data to perform the computation.
    #[error("insufficient data: {0}")]
    InsufficientData(String),

    /// A matrix expected to be symmetric is not, within tolerance.
    #[error("matrix not symmetric: max |a_ij - a_ji| = {max_asymmetry:.3e} exceeds tolerance")]
    NotSymmetric { max_asymmetry: f64 },

    /// The Jacobi eigensolver failed to reach its convergence criterion.
    #[error("eigensolver did not converge after {sweeps} sweeps (off-diagonal residual {residual:.3e})")]
    NoConvergence { sweeps: usize, residual: f64 },

    /// A covariance matrix is singular where a density is required.
    #[error("degenerate covariance: {0}")]
    DegenerateCovariance(String),

    /// Inputs land exactly on a declared singularity of a closed form.
    #[error("singular configuration: {0}")]
    SingularConfiguration(String),

    /// A numeric computation produced non-finite values.
    #[error("numeric failure: {0}")]
    NumericFailure(String),

    /// An identity label was not found where one was required.
    #[error("unknown identity {0}")]
    UnknownIdentity(usize),

    /// A nonempty input was required.
    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    /// A series or continued-fraction evaluation hit its iteration cap.
    #[error("special function did not converge within {iterations} iterations")]
    SpecialFunction { iterations: usize },
}
