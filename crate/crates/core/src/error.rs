use alloc::string::String;
use alloc::vec::Vec;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("token id {id} out of vocabulary of size {vocab}")]
    OutOfVocabulary { id: i64, vocab: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("empty pooling span at {0}")]
    EmptySpan(usize),
    #[error("span {start}..{end} out of bounds for length {len}")]
    SpanOutOfBounds {
        start: usize,
        end: usize,
        len: usize,
    },
    #[error("class index {index} out of range for {classes} classes")]
    ClassOutOfRange { index: usize, classes: usize },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("targets must be 0 or 1")]
    NonBinaryTarget,
    #[error("sequence length {len} exceeds the fixed maximum {max}")]
    SequenceTooLong { len: usize, max: usize },
    #[error("empty sequence")]
    EmptySequence,
    #[error("loss must be a scalar, got shape {0:?}")]
    NotScalar(Vec<usize>),
    #[error("variable {0} does not belong to this tape")]
    UnknownVar(usize),
    #[error("parse error at position {pos}: {msg}")]
    Parse { pos: usize, msg: String },
    #[error("empty evaluation set")]
    EmptyEvaluation,
    #[error("infeasible generator spec: {0}")]
    Infeasible(String),
    #[error("step {step} outside schedule range 0..={total}")]
    StepOutOfRange { step: usize, total: usize },
}

pub type Result<T> = core::result::Result<T, Error>;

pub(crate) fn shape_err(msg: impl Into<String>) -> Error {
    Error::Shape(msg.into())
}
