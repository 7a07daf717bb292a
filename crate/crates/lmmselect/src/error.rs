use std::path::PathBuf;

/// Crate-wide error type.
///
/// Variants split into two families that the CLI maps to distinct exit
/// codes: input problems (bad dimensions, bad files, bad arguments) and
/// numerical problems (non-convergence, degenerate fits).
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: String,
        expected: usize,
        found: usize,
    },

    #[error("group {label} has no observations")]
    EmptyGroup { label: usize },

    #[error("non-finite value in {context} at index {index}")]
    NonFinite { context: String, index: usize },

    #[error("invalid {name}: {reason}")]
    InvalidArgument { name: &'static str, reason: String },

    /// g(u~) = 0: the profiled likelihood contains log g and is undefined.
    #[error("degenerate perfect fit: g(u~) = 0, profiled log-likelihood undefined")]
    DegenerateFit,

    /// The factored matrix is positive definite for all finite inputs, so a
    /// failure here signals non-finite values upstream.
    #[error("Cholesky factorization failed in {0}; inputs are likely non-finite")]
    Factorization(&'static str),

    #[error("optimization failed: {0}")]
    Optimization(String),

    #[error("no lambda on the grid produced a converged fit")]
    NoConvergedFit,

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
}

impl Error {
    /// Process exit code the CLI reports for this error: 2 for input
    /// problems, 3 for numerical problems.
    pub fn exit_code(&self) -> u8 {
        match self {
            Error::DimensionMismatch { .. }
            | Error::EmptyGroup { .. }
            | Error::NonFinite { .. }
            | Error::InvalidArgument { .. }
            | Error::Io { .. }
            | Error::Parse { .. } => 2,
            Error::DegenerateFit
            | Error::Factorization(_)
            | Error::Optimization(_)
            | Error::NoConvergedFit => 3,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
