use std::path::PathBuf;

use crate::tensor_io::Violation;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("I/O error on {path}: {source}")]
    IoAt {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed manifest: {0}")]
    Manifest(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("bad magic: expected \"HOMOGNX1\"")]
    BadMagic,

    #[error("unsupported container version {found:?}")]
    VersionMismatch { found: String },

    #[error("truncated payload: {0}")]
    TruncatedPayload(String),

    #[error("shape/offset mismatch: {0}")]
    ShapeMismatch(String),

    #[error("{}", .0.first().map(|v| v.to_string()).unwrap_or_default())]
    Invalid(Vec<Violation>),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("SVD did not converge for a {rows}x{cols} matrix")]
    SvdNoConvergence { rows: usize, cols: usize },

    #[error("SVD reconstruction check failed: |X|_F^2 = {frobenius_sq}, sum sigma^2 = {sigma_sq}")]
    SvdInaccurate { frobenius_sq: f64, sigma_sq: f64 },

    #[error("{0} undefined for zero matrix")]
    ZeroMatrix(&'static str),

    #[error("zero-norm token at row {row}")]
    ZeroNormRow { row: usize },

    #[error("degenerate: all vectors coincide, κ unbounded (r_bar = {r_bar})")]
    UnboundedConcentration { r_bar: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

impl Error {
    pub(crate) fn io_at(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::IoAt {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn arg(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
