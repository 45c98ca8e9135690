use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid table structure: {0}")]
    Structure(String),

    #[error("span {span} exceeds vocabulary maximum {max_span}")]
    SpanOutOfVocabulary { span: u32, max_span: u32 },

    #[error("invalid generator config: {0}")]
    Config(String),

    #[error("content of cell ({row}, {col}) does not fit its region")]
    ContentOverflow { row: usize, col: usize },

    #[error("{path}:{line}: {message}")]
    Dataset {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("invalid metric input: {0}")]
    MetricInput(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
