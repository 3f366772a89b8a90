use std::io;
use std::path::PathBuf;

use thiserror::Error;

/// Errors surfaced by the library. The CLI maps each variant onto an exit code.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {context}: expected {expected}, got {actual}")]
    Shape {
        context: String,
        expected: String,
        actual: String,
    },

    #[error("parameter segment `{segment}` has shape {actual:?}, layout expects {expected:?}")]
    Segment {
        segment: String,
        expected: (usize, usize),
        actual: (usize, usize),
    },

    #[error("flat vector has length {actual}, layout expects {expected}")]
    FlatLength { expected: usize, actual: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid data: {0}")]
    Data(String),

    #[error("mean activation {value} of unit {unit} is outside (0,1)")]
    Saturated { unit: usize, value: f64 },

    #[error("label {label} at sample {index} is outside [0, {classes})")]
    Label { index: usize, label: usize, classes: usize },

    #[error("objective is not finite at the starting point")]
    NonFiniteStart,

    #[error("fixed-step descent diverged: cost rose for {steps} consecutive steps (last cost {cost})")]
    Diverged { steps: usize, cost: f64 },

    #[error("bad IDX file {path}: {problem}")]
    Idx { path: PathBuf, problem: IdxProblem },

    #[error("CSV row {row}: {reason}")]
    Csv { row: usize, reason: String },

    #[error("corpus line {line}: {reason}")]
    Corpus { line: usize, reason: String },

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum IdxProblem {
    #[error("magic number {found} (expected {expected})")]
    BadMagic { expected: u32, found: u32 },
    #[error("truncated: expected {expected} bytes of payload, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("declared dimensions {0:?} overflow addressable size")]
    DimensionOverflow(Vec<u32>),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// 1 for configuration problems, 3 for optimization failures, 2 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 1,
            Error::Saturated { .. } | Error::NonFiniteStart | Error::Diverged { .. } => 3,
            _ => 2,
        }
    }

    pub(crate) fn shape(context: impl Into<String>, expected: impl ToString, actual: impl ToString) -> Self {
        Error::Shape {
            context: context.into(),
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }
}
