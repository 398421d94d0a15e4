use thiserror::Error;

/// Errors raised by decompositions, operators, quadrature and the harness.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("index out of range: {0}")]
    InvalidIndex(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("no sample met the conditioning bound after {0} attempts")]
    RejectionExhausted(usize),
    #[error("point outside the open cell (margin {margin:.3e})")]
    DecompositionSingular { margin: f64 },
    #[error("vanishing diagonal datum ({0:.3e})")]
    ZeroDiagonal(f64),
    #[error("translation leaves the chart")]
    ChartExit,
    #[error("quadrature did not converge: {0}")]
    NonConvergent(String),
    #[error("kernel evaluated at its singularity")]
    KernelSingular,
    #[error("kernel is not locally integrable: {0}")]
    KernelNotIntegrable(String),
    #[error("test function lacks the required analyticity: {0}")]
    AnalyticityViolation(String),
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("configuration error: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, Error>;
