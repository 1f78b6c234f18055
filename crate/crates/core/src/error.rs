use thiserror::Error;

/// Errors produced across the ranking pipeline.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("format error at row {row}, column {col}: {msg}")]
    Format { row: usize, col: usize, msg: String },

    /// Variable with zero (or negative) variance. Index is 0-based.
    #[error("degenerate variable {0} (zero variance)")]
    DegenerateVariable(usize),

    /// Principal submatrix of the Gram matrix is numerically singular.
    #[error("singular neighborhood {0:?}")]
    SingularNeighborhood(Vec<usize>),

    #[error("complete or quasi-complete separation detected")]
    Separation,

    #[error("computation too expensive: {0}")]
    Cost(String),

    #[error("io: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn param<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Parameter(msg.into()))
}
