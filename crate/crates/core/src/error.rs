use std::io;

use thiserror::Error;

/// Every failure the library can report.
#[derive(Debug, Error)]
pub enum DptError {
    #[error("dimension mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Dimension {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("invalid shape: {0}")]
    Shape(String),
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("label {label} out of range for {classes} classes")]
    Label { label: usize, classes: usize },
    #[error("degenerate (zero-norm) vector in {0}")]
    DegenerateVector(&'static str),
    #[error("contract violated: {0}")]
    Contract(String),
    #[error("optimizer: {0}")]
    Optimizer(String),
    #[error("injection plan has {plan} entries but the encoder has {layers} layers")]
    Plan { plan: usize, layers: usize },
    #[error("token sequence of length {len} exceeds maximum {max}")]
    Length { len: usize, max: usize },
    #[error("malformed file at byte {offset}: {message}")]
    Format { offset: u64, message: String },
    #[error("vocabulary: {0}")]
    Vocabulary(String),
    #[error("arity mismatch: {0}")]
    Arity(String),
    #[error("configuration: {0}")]
    Configuration(String),
    #[error("data: {0}")]
    Data(String),
    #[error("usage: {0}")]
    Usage(String),
    #[error("numerical divergence at step {step}: loss is {value}")]
    Divergence { step: usize, value: f32 },
    #[error(transparent)]
    Io(#[from] io::Error),
}

impl DptError {
    /// Process exit code for the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            DptError::Usage(_) | DptError::Configuration(_) | DptError::Parameter(_) => 1,
            DptError::Divergence { .. } => 3,
            _ => 2,
        }
    }

    pub(crate) fn dim(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Self {
        DptError::Dimension {
            op,
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        }
    }
}

pub type Result<T> = std::result::Result<T, DptError>;
