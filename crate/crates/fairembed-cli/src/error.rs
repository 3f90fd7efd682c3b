//! Error taxonomy of the command line: every failure maps to one of the
//! documented exit codes (2 config, 3 numeric, 4 I/O).

use fairembed_core::CoreError;

/// Top-level failure of a run, tagged with the exit-code class.
#[derive(Debug)]
pub enum AppError {
    /// Invalid configuration, flags, or data shapes derived from them.
    Config(String),
    /// Numerical failure inside a pipeline stage.
    Numeric(String),
    /// Filesystem or environment failure.
    Io(String),
}

impl AppError {
    pub fn exit_code(&self) -> i32 {
        match self {
            AppError::Config(_) => 2,
            AppError::Numeric(_) => 3,
            AppError::Io(_) => 4,
        }
    }
}

impl std::fmt::Display for AppError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            AppError::Config(msg) => write!(f, "config error: {msg}"),
            AppError::Numeric(msg) => write!(f, "numeric error: {msg}"),
            AppError::Io(msg) => write!(f, "i/o error: {msg}"),
        }
    }
}

impl std::error::Error for AppError {}

impl From<CoreError> for AppError {
    fn from(e: CoreError) -> Self {
        match e {
            CoreError::NumericFailure(_)
            | CoreError::NoConvergence { .. }
            | CoreError::SpecialFunction { .. }
            | CoreError::DegenerateCovariance(_)
            | CoreError::NotSymmetric { .. }
            | CoreError::SingularConfiguration(_) => AppError::Numeric(e.to_string()),
            CoreError::InvalidParameter { .. }
            | CoreError::DimensionMismatch { .. }
            | CoreError::InsufficientData(_)
            | CoreError::EmptyInput(_)
            | CoreError::UnknownIdentity(_) => AppError::Config(e.to_string()),
        }
    }
}

impl From<std::io::Error> for AppError {
    fn from(e: std::io::Error) -> Self {
        AppError::Io(e.to_string())
    }
}
