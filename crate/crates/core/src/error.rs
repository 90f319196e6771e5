use thiserror::Error;

/// Errors raised by model construction, simulation, nuisance estimation and
/// the estimators.
#[derive(Debug, Error)]
pub enum OpeError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid probability table: {0}")]
    InvalidDistribution(String),

    #[error("operation requires a {expected} process")]
    WrongFlavor { expected: &'static str },

    #[error("empty dataset requested")]
    EmptyDataset,

    #[error("dataset kind mismatch: expected {expected}")]
    WrongDataset { expected: &'static str },

    #[error("invalid policy specification: {0}")]
    InvalidSpec(String),

    #[error("no overlap: evaluation policy puts mass on (t={t}, s={s}, a={a}) where the behavior policy does not")]
    NoOverlap { t: usize, s: usize, a: usize },

    #[error("no overlap: the evaluation visitation distribution puts mass on state {s} where the sampling distribution does not")]
    NoStateOverlap { s: usize },

    #[error("singular moment system (condition estimate {condition:.3e})")]
    Singular { condition: f64 },

    #[error("iterative solver did not converge after {iterations} iterations (residual {residual:.3e})")]
    NotConverged { iterations: usize, residual: f64 },

    #[error("invalid fold count K={k} for n={n} records (need 1 <= K <= n)")]
    InvalidFolds { k: usize, n: usize },

    #[error("invalid configuration: {field}: {reason}")]
    Config { field: String, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = OpeError> = std::result::Result<T, E>;

impl OpeError {
    pub(crate) fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        OpeError::Config {
            field: field.into(),
            reason: reason.into(),
        }
    }
}
