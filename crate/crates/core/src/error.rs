//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },
    #[error("empty input: {0}")]
    EmptyInput(&'static str),
    #[error("validation error: {0}")]
    Validation(String),
    #[error("corpus parse error at line {line}: {msg}")]
    CorpusParse { line: usize, msg: String },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("model format error: {0}")]
    ModelFormat(String),
    #[error("training diverged: {0}")]
    Divergence(String),
}

pub type Result<T> = std::result::Result<T, Error>;
