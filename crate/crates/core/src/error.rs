use thiserror::Error;

/// Errors raised by model construction, exact evaluation and simulation.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("state {state} out of range for a chain with {m} states")]
    StateOutOfRange { state: usize, m: usize },

    #[error("chain is not ergodic: no closed walk with positive edges covers all states")]
    NotErgodic,

    #[error("rare event has zero averaged probability")]
    DegenerateRareEvent,

    #[error("quadrature did not reach the target error {target:e} (estimate {estimate:e})")]
    QuadratureFailure { target: f64, estimate: f64 },

    #[error("no rare event within {max_steps} steps")]
    MaxStepsExceeded { max_steps: u64 },

    #[error("I - Phi0(s) is numerically singular (spectral radius estimate {spectral_radius})")]
    SingularSystem { spectral_radius: f64 },

    #[error("path has {available} steps but {required} are required")]
    PathTooShort { required: usize, available: usize },

    #[error("precondition failed: condition {condition} ({detail})")]
    PreconditionFailed { condition: String, detail: String },

    #[error("unknown scenario '{name}'; available: {}", available.join(", "))]
    UnknownScenario { name: String, available: Vec<String> },

    #[error("malformed config: {0}")]
    Config(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidParameter(msg.into())
}
