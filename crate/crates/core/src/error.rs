use std::io;
use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("I/O error: {0}")]
    Io(#[from] io::Error),

    #[error("I/O error on {path}: {source}")]
    IoAt {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error("format error: {0}")]
    Format(String),

    #[error("format error at line {line}: {msg}")]
    FormatAt { line: usize, msg: String },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("model contains no usable atoms")]
    EmptyModel,

    #[error("no voxel at or above level {0}")]
    EmptySelection(f64),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("unknown element {0:?}")]
    UnknownElement(String),

    #[error("coordinate {0} does not fit the PDB coordinate field")]
    CoordinateOverflow(f64),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("zero variance: {0}")]
    ZeroVariance(&'static str),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("unknown condition {0:?}")]
    UnknownCondition(String),

    #[error("pairing failed: {0}")]
    Pairing(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("all {0} samples failed")]
    AllSamplesFailed(usize),
}

impl Error {
    pub(crate) fn io_at(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::IoAt { path: path.into(), source }
    }
}
