use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// The message already includes the cause, so it is not chained as a
    /// source as well.
    #[error("I/O error on {path}: {cause}")]
    Io { path: PathBuf, cause: std::io::Error },

    /// Malformed file contents (bad magic, truncated payload, unparsable line).
    #[error("format error: {0}")]
    Format(String),

    /// Files that parse individually but disagree with each other.
    #[error("consistency error: {0}")]
    Consistency(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("degenerate row for sentence {id}: zero norm")]
    DegenerateRow { id: u32 },

    #[error("degenerate centroid{}: norm {norm:e} below threshold {threshold:e}", .id.map(|i| format!(" for sentence {i}")).unwrap_or_default())]
    DegenerateCentroid {
        id: Option<u32>,
        norm: f64,
        threshold: f64,
    },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("rows are not aligned: {0}")]
    Misaligned(String),

    #[error("layers not present in dump: {0:?}")]
    MissingLayers(Vec<usize>),

    #[error("role `{0}` not present in dump")]
    MissingRole(String),

    #[error("no centroid for original {0}")]
    MissingCentroid(u32),

    #[error("original {id} has no translation into `{language}`")]
    MissingTranslation { id: u32, language: String },

    #[error("POS templates with fewer than {min} source sentences: {templates:?}")]
    SparseTemplates { min: usize, templates: Vec<String> },

    #[error("optimizer did not converge in {iterations} iterations (gradient norm {grad_norm:e})")]
    NotConverged { iterations: usize, grad_norm: f64 },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            cause: source,
        }
    }
}
