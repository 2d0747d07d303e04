use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate density: integral over the grid box is zero")]
    DegenerateDensity,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("test function not compactly supported in domain: {0}")]
    NotCompactlySupported(String),

    #[error("resolvent failed: residual {residual:e} after {iterations} iterations")]
    ResolventFailed { residual: f64, iterations: usize },

    #[error("rescaled time out of range: s = {s} but S_inf = {s_inf}")]
    RescaledTimeOutOfRange { s: f64, s_inf: f64 },

    #[error("CFL violated: dt = {dt:e} exceeds admissible dt = {admissible:e}")]
    CflViolated { dt: f64, admissible: f64 },

    #[error("support of size {size} exceeds exact-solver budget {budget}")]
    ExceedsBudget { size: usize, budget: usize },

    #[error("marginal mass mismatch: {0:e} vs {1:e}")]
    MarginalMismatch(f64, f64),

    #[error("support point outside grid: {0}")]
    OutsideGrid(String),

    #[error("invariant measure not converged: stationarity residual {0:e}")]
    InvariantNotConverged(f64),

    #[error("config key `{key}`: {msg}")]
    Config { key: String, msg: String },

    #[error("stage `{stage}` failed: {msg}")]
    StageFailed { stage: String, msg: String },

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn stage(stage: &str, msg: impl Into<String>) -> Self {
        Error::StageFailed {
            stage: stage.to_string(),
            msg: msg.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
