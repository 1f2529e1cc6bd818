//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A pixel column holds more than one positive entry, or a negative one.
    #[error("pixel ({}, {}) is not a surface column: {count} nonzero entries, negative = {negative}", .pixel.0, .pixel.1)]
    Membership {
        pixel: (usize, usize),
        count: usize,
        negative: bool,
    },

    #[error("geometry error: {0}")]
    Geometry(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: String, found: String },

    #[error("success probability {prob} >= 1 at pair {pair}, bin {bin}")]
    ProbabilityOverflow { pair: usize, bin: usize, prob: f64 },

    #[error("configuration error: {0}")]
    Config(String),

    /// A conjugate gradient denominator vanished before convergence.
    /// `best` is the iterate with the smallest residual seen so far.
    #[error("conjugate gradient breakdown at iteration {iteration}")]
    Breakdown { iteration: usize, best: Vec<f64> },

    #[error("singular system: {nodes} unanchored nodes and no data weight anywhere")]
    SingularSystem { nodes: usize },

    #[error("measured signal is identically zero")]
    ZeroSignal,

    #[error("ground truth surface has no foreground pixels")]
    EmptyTruth,

    #[error("format error at byte {offset}: {message}")]
    Format { offset: u64, message: String },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Wraps the error with the name of the stage that raised it.
    pub fn in_stage(self, stage: &'static str) -> Error {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }

    pub(crate) fn mismatch(expected: impl ToString, found: impl ToString) -> Error {
        Error::DimensionMismatch {
            expected: expected.to_string(),
            found: found.to_string(),
        }
    }
}
