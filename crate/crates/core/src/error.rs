use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("entry ({row}, {col}) lies outside the stored band")]
    OutOfBand { row: usize, col: usize },

    #[error("bad dimension: {0}")]
    BadDimension(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("edge {0} is degenerate (near-zero length)")]
    DegenerateEdge(usize),

    #[error("tangents at vertex {0} are antiparallel")]
    AntiparallelTangents(usize),

    #[error("system matrix is not positive definite (curvature {curvature:e} along search direction)")]
    NotSpd { curvature: f64 },

    #[error("solver failure: {0}")]
    SolverFailure(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        if e.is_io() {
            Error::Io(e.into())
        } else {
            Error::Parse(e.to_string())
        }
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::Io(io),
            other => Error::Parse(format!("{other:?}")),
        }
    }
}
