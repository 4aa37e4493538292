use thiserror::Error;

/// Errors raised by the numerical kernels and the design pipeline.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: {detail}")]
    Dimension { context: &'static str, detail: String },

    #[error("argument out of domain in {context}: {detail}")]
    Domain { context: &'static str, detail: String },

    #[error("{context} did not converge after {iterations} iterations (residual {residual:.3e})")]
    Convergence {
        context: &'static str,
        iterations: usize,
        residual: f64,
    },

    /// A discrete-time matrix that must be Schur stable is not.
    #[error("{context}: spectral radius {radius:.6} is not below 1")]
    Stability { context: &'static str, radius: f64 },

    #[error("ill-conditioned input in {context}: {detail}")]
    Conditioning { context: &'static str, detail: String },

    #[error("invalid configuration: {0}")]
    Config(String),
}

impl Error {
    pub(crate) fn dim(context: &'static str, detail: impl Into<String>) -> Self {
        Error::Dimension {
            context,
            detail: detail.into(),
        }
    }

    pub(crate) fn domain(context: &'static str, detail: impl Into<String>) -> Self {
        Error::Domain {
            context,
            detail: detail.into(),
        }
    }

    /// True for failures caused by the numerics (non-convergence, instability,
    /// conditioning) rather than by malformed input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::Convergence { .. } | Error::Stability { .. } | Error::Conditioning { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
