use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = CoreError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum CoreError {
    #[error("{path}: line {line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("empty point cloud")]
    EmptyCloud,

    #[error("requested {requested} but the cloud only has {available} points")]
    NotEnoughPoints { requested: usize, available: usize },

    #[error("neighbor count {0} is below the minimum of {1}")]
    TooFewNeighbors(usize, usize),

    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(&'static str),

    #[error("cloud has no normals")]
    MissingNormals,

    #[error("unknown {kind} '{name}' (known: {known})")]
    UnknownStrategy {
        kind: &'static str,
        name: String,
        known: String,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("bad feature dump: {0}")]
    BadDump(String),
}
