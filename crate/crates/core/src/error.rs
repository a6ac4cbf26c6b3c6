use thiserror::Error;

use crate::trainer::TrainReport;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Shapes, architectures, counts or names that do not fit together.
    #[error("configuration error: {0}")]
    Config(String),

    /// An API was called out of order, e.g. backward with a foreign trace.
    #[error("usage error: {0}")]
    Usage(String),

    /// A value outside the domain of a rule, e.g. a bucket a reasoning type discards.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("training diverged: {0}")]
    Divergence(String),

    #[error("training failed after {restarts} restart(s); best validation accuracy {best_accuracy:.4}")]
    TrainingFailure {
        restarts: usize,
        best_accuracy: f64,
        report: Box<TrainReport>,
    },

    #[error("attribution method {method} failed: {detail}")]
    MethodFailure { method: String, detail: String },

    #[error("numerical degeneracy in layer {layer}: {detail}")]
    NumericalDegeneracy { layer: usize, detail: String },

    #[error("degenerate attribution: map has no positive mass")]
    DegenerateAttribution,

    #[error("integrity error: {0}")]
    Integrity(String),

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}
