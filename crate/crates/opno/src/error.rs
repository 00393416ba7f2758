//! Error type shared across the crate.

use thiserror::Error;

/// Errors produced by transforms, the model, the solver and file I/O.
#[derive(Debug, Error)]
pub enum Error {
    /// Invalid model or run configuration.
    #[error("invalid configuration: {0}")]
    Config(String),

    /// Grid construction with an unusable polynomial degree.
    #[error("invalid grid degree {degree}: need degree >= 2")]
    InvalidGrid { degree: usize },

    /// Interval with a >= b.
    #[error("invalid interval [{a}, {b}]: need a < b")]
    InvalidInterval { a: f64, b: f64 },

    /// Vector/matrix shape disagreement.
    #[error("shape mismatch in {context}: expected {expected}, got {got}")]
    ShapeMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    /// Robin coefficients that do not define a boundary condition.
    #[error("degenerate boundary condition: (a, b) = (0, 0) on the {side} side")]
    DegenerateBc { side: &'static str },

    /// The compact-basis linear system has (numerically) vanishing determinant.
    #[error("degenerate compact basis at mode k = {k}: determinant {det:.3e}")]
    DegenerateBasis { k: usize, det: f64 },

    /// Banded solve hit a (numerically) zero pivot.
    #[error("singular banded system at row {row}")]
    SingularSystem { row: usize },

    /// Reference field with zero norm in a relative error.
    #[error("relative L2 undefined: reference norm is zero")]
    ZeroReference,

    /// Non-finite loss during training.
    #[error("training diverged at epoch {epoch}: loss = {loss}")]
    Diverged { epoch: usize, loss: f64 },

    /// Non-finite state in the time stepper.
    #[error("solver diverged at step {step}{}", sample.map(|s| format!(" (sample {s})")).unwrap_or_default())]
    SolverDiverged { step: usize, sample: Option<usize> },

    /// Backward pass without a training-mode tape.
    #[error("backward pass requires a tape from a training-mode forward pass")]
    MissingTape,

    /// Dataset without samples where samples are required.
    #[error("dataset is empty")]
    EmptyDataset,

    /// Malformed container file.
    #[error("container format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
