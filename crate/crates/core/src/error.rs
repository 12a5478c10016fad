use thiserror::Error;

/// Errors surfaced by the detection library.
#[derive(Debug, Error)]
pub enum Error {
    /// A scalar argument fell outside the mathematical domain of a function.
    #[error("domain error in {func}: argument {value} is not finite")]
    Domain { func: &'static str, value: f64 },

    /// Vector/matrix shapes do not line up.
    #[error("shape mismatch in {context}: expected {expected}, got {got}")]
    Shape {
        context: &'static str,
        expected: String,
        got: String,
    },

    /// Invalid configuration (zero dimensions, empty grids, duplicate axis points, ...).
    #[error("config error: {0}")]
    Config(String),

    /// Input data failed an invariant check.
    #[error("validation error: {0}")]
    Validation(String),

    /// A serialized artifact could not be parsed.
    #[error("parse error: {0}")]
    Parse(String),

    /// Training loss became non-finite.
    #[error("training diverged at epoch {epoch} (stage {stage}): loss = {loss}")]
    Training {
        epoch: usize,
        stage: &'static str,
        loss: f64,
    },

    /// An iterative solver produced a non-finite iterate.
    #[error("numerical error in {context}: non-finite iterate at step {step}")]
    Numerical { context: &'static str, step: usize },

    /// Exhaustive search space exceeds the hard guard.
    #[error("capacity error: candidate set of size {size} exceeds guard {guard}")]
    Capacity { size: u64, guard: u64 },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
