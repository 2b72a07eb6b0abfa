//! Error type shared across the crate.

use thiserror::Error;

/// Errors produced while loading models or running bound computations.
#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("model parse error: {0}")]
    Parse(#[from] serde_json::Error),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("unknown activation kind `{0}`")]
    UnknownActivation(String),

    #[error("invalid activation parameter: {0}")]
    InvalidActivation(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("invalid interval: lower {lower} > upper {upper}")]
    InvalidInterval { lower: f64, upper: f64 },

    #[error("invalid max-pool spec: {0}")]
    InvalidPool(String),

    #[error("unsupported norm `{0}` (supported: 1, 2, inf)")]
    UnsupportedNorm(String),

    #[error("power iteration did not converge: residual {residual:.3e} after {iterations} iterations")]
    PowerIterationDiverged { residual: f64, iterations: usize },

    #[error("enumeration cap exceeded: {unstable} unstable neurons > cap {cap}")]
    EnumerationCap { unstable: usize, cap: usize },

    #[error("operation requires piecewise-linear activations, found `{0}`")]
    NotPiecewiseLinear(String),

    #[error("input is misclassified: expected class {expected}, network predicts {predicted}")]
    Misclassified { expected: usize, predicted: usize },

    #[error("invalid class index {index} for {outputs} outputs")]
    InvalidClass { index: usize, outputs: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("config error: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, Error>;
