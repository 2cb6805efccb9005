use thiserror::Error;

pub type Result<T> = std::result::Result<T, RotorError>;

#[derive(Debug, Error)]
pub enum RotorError {
    #[error("argument out of domain: {0}")]
    Domain(String),

    #[error("basis window [{lo}, {hi}] too narrow: truncated tail {tail:e} exceeds {tol:e}")]
    WindowTooNarrow { lo: i64, hi: i64, tail: f64, tol: f64 },

    #[error("displaced support [{lo}, {hi}] does not fit the window")]
    SupportOverflow { lo: i64, hi: i64 },

    #[error("basis windows differ: [{0}, {1}] vs [{2}, {3}]")]
    WindowMismatch(i64, i64, i64, i64),

    #[error("closed-form overlap needs equal kappa (got {0} and {1})")]
    UnequalKappa(f64, f64),

    #[error("angle grid is not uniform")]
    NonUniformGrid,

    #[error("degenerate state: |<E>| = {0:e} leaves the rotated sine undefined")]
    Degenerate(f64),

    #[error("angular-momentum eigenstate: variance of L vanishes")]
    ZeroMomentumSpread,

    #[error("frequency grid too coarse: spacing {spacing:e} exceeds {limit:e}")]
    GridTooCoarse { spacing: f64, limit: f64 },

    #[error("quadrature did not converge: relative change {0:e} on refinement")]
    NonConvergentQuadrature(f64),

    #[error("invalid size: {0}")]
    InvalidSize(String),

    #[error("count record has zero total")]
    ZeroTotal,

    #[error("grid resolution: {0}")]
    GridResolution(String),

    #[error("invalid density operator: {0}")]
    InvalidDensity(String),

    #[error("bootstrap: {failed} of {total} replicates failed")]
    BootstrapFailure { failed: usize, total: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("malformed input: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
