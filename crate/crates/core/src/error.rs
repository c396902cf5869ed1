use thiserror::Error;

#[derive(Error, Debug, Clone, PartialEq)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid shape: {0}")]
    InvalidShape(String),

    #[error("mode {mode} out of range for a {ndims}-way tensor")]
    BadMode { mode: usize, ndims: usize },

    #[error("index out of range: {0}")]
    IndexOutOfRange(String),

    #[error("duplicate index {0:?}")]
    DuplicateIndex(Vec<usize>),

    #[error("indices are not in canonical order at position {0}")]
    Unsorted(usize),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("weight tensor is not binary: {0}")]
    NonBinaryWeights(f64),

    #[error("empty slab {index} in mode {mode}")]
    EmptySlab { mode: usize, index: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("infeasible request: {0}")]
    Infeasible(String),

    #[error("all {0} starts failed")]
    AllStartsFailed(usize),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
