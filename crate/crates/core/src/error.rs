use std::path::PathBuf;

/// Errors produced by the scanforge pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("alignment failed: {0}")]
    AlignmentFailed(String),

    #[error("numeric domain error: {0}")]
    NumericDomain(String),

    #[error("no photo quadrilateral found")]
    NoQuadFound,

    #[error("{}:{line}:{column}: {message}", path.display())]
    Parse {
        path: PathBuf,
        line: usize,
        column: usize,
        message: String,
    },

    #[error("invalid annotation for '{id}': {message}")]
    InvalidAnnotation { id: String, message: String },

    #[error("missing inputs: {}", .0.join(", "))]
    MissingInputs(Vec<String>),

    #[error("index error at record '{record}': {message}")]
    Index { record: String, message: String },

    #[error("image codec error for {}: {message}", path.display())]
    Codec { path: PathBuf, message: String },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }

    pub(crate) fn input(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}
