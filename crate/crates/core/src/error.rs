use alloc::string::String;

/// Errors raised by the numerical core.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    /// Shapes, indices or supports that do not fit together.
    #[error("structural error: {0}")]
    Structural(String),
    /// An argument outside the mathematical domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),
    /// Not enough (or degenerate) data to estimate something.
    #[error("estimation error: {0}")]
    Estimation(String),
    /// An iterative method stopped before reaching its tolerance.
    #[error("no convergence after {iterations} iterations (residual {residual:e})")]
    Convergence { iterations: usize, residual: f64 },
    /// Non-finite values where finite ones are required.
    #[error("numeric error: {0}")]
    Numeric(String),
    /// Required input data is missing.
    #[error("ingestion error: {0}")]
    Ingestion(String),
    /// A series has a hole where consecutive values are needed.
    #[error("gap error: {0}")]
    Gap(String),
    /// An API used out of order or with mismatched artefacts.
    #[error("usage error: {0}")]
    Usage(String),
    /// A training or rollout run failed.
    #[error("run error: {0}")]
    Run(String),
}

pub type Result<T> = core::result::Result<T, Error>;

macro_rules! bail {
    ($variant:ident, $($arg:tt)*) => {
        return Err($crate::error::Error::$variant(alloc::format!($($arg)*)))
    };
}
pub(crate) use bail;
