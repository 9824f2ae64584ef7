use crate::sample::SampleId;
use thiserror::Error;

/// Errors raised by the linear-algebra primitives, the models and the harness.
#[derive(Debug, Error)]
pub enum Error {
    #[error("singular pivot in {context}: |pivot| = {pivot:e} <= tolerance {tolerance:e}")]
    SingularPivot {
        context: &'static str,
        pivot: f64,
        tolerance: f64,
    },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("index {index} out of range for order {order}")]
    IndexOutOfRange { index: usize, order: usize },

    #[error("unsupported kernel: {0}")]
    UnsupportedKernel(&'static str),

    #[error("edit would leave the model without samples")]
    EmptyModel,

    #[error("unknown sample id {0}")]
    UnknownSample(SampleId),

    #[error("duplicate sample id {0}")]
    DuplicateSample(SampleId),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("dimension override {given} is smaller than the largest feature index {seen}")]
    DimensionOverride { given: usize, seen: usize },

    #[error("add pool exhausted at round {round}: needed {needed}, {available} left")]
    PlanExhausted {
        round: usize,
        needed: usize,
        available: usize,
    },

    #[error("round {round}: {source}")]
    Round {
        round: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("malformed model dump: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn in_round(self, round: usize) -> Self {
        Error::Round {
            round,
            source: Box::new(self),
        }
    }
}
