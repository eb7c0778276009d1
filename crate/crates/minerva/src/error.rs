//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("integrity error: {0}")]
    Integrity(String),

    #[error("not found: {0}")]
    NotFound(String),

    #[error("flatten failure: unresolvable node {cid}")]
    FlattenFailure { cid: String },

    #[error("scheduling failure: {0}")]
    SchedulingFailure(String),

    #[error("query failure in {stage}: {message}")]
    QueryFailure { stage: String, message: String },

    #[error("plan error: {0}")]
    PlanError(String),

    #[error("syntax error at byte {position}: {message}")]
    Syntax { position: usize, message: String },

    #[error("format error: {0}")]
    Format(String),

    #[error("path error: {0}")]
    Path(String),

    #[error("parse error at record {line}: {message}")]
    RowParse { line: usize, message: String },

    #[error("record of {size} bytes exceeds chunk size {chunk_size}")]
    RecordTooLarge { size: usize, chunk_size: usize },

    #[error("transfer failure: {0}")]
    TransferFailure(String),

    #[error("grid resolution insufficient: {lost:.2e} probability mass beyond t_max={t_max}; increase t_max")]
    Resolution { lost: f64, t_max: f64 },

    #[error("config error: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub fn at_stage(self, stage: &str) -> Self {
        Error::QueryFailure {
            stage: stage.to_string(),
            message: self.to_string(),
        }
    }
}
