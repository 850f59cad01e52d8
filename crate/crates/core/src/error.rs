use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// The transformed point lies on or behind the source camera plane.
    #[error("non-positive source depth {depth:.3e}")]
    NonPositiveSourceDepth { depth: f64 },

    #[error("edge set is empty: {0}")]
    EmptyEdgeSet(&'static str),

    #[error("no valid pixels in mask")]
    EmptyMask,

    #[error("point set is empty: {0}")]
    EmptyPointSet(&'static str),

    #[error("non-finite {what} at pixel ({x}, {y})")]
    NonFinite {
        what: &'static str,
        x: usize,
        y: usize,
    },

    #[error("malformed file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}
