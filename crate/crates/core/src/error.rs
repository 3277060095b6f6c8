use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("row {row}: {message}")]
    Row { row: usize, message: String },

    #[error("ply: {0}")]
    Ply(String),

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("timestamps must be strictly increasing (index {index}: {previous} then {current})")]
    NonIncreasingTimestamps {
        index: usize,
        previous: f64,
        current: f64,
    },

    #[error("frame mismatch: expected `{expected}`, found `{found}`")]
    FrameMismatch { expected: String, found: String },

    #[error("degenerate geometry: {0}")]
    Degenerate(String),

    #[error("insufficient correspondences: {found} found, {required} required")]
    InsufficientPairs { found: usize, required: usize },

    #[error("empty window [{start}, {end}] over trajectory")]
    EmptyWindow { start: f64, end: f64 },

    #[error("too few points: {found} found, {required} required")]
    TooFewPoints { found: usize, required: usize },

    #[error("linear solver did not converge: residual {residual:e} after {iterations} iterations")]
    SolverDiverged { iterations: usize, residual: f64 },

    #[error("leaf-to-wood ratio undefined: no wood points")]
    UndefinedRatio,

    #[error("duplicate record ({sapling_id}, {session_id})")]
    DuplicateRecord {
        sapling_id: String,
        session_id: String,
    },

    #[error("record ({sapling_id}, {session_id}) not found")]
    MissingRecord {
        sapling_id: String,
        session_id: String,
    },

    #[error("missing artifact {}", .0.display())]
    MissingArtifact(PathBuf),

    #[error("config: {0}")]
    Config(String),

    #[error("{}: {source}", .path.display())]
    File {
        path: PathBuf,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn parse(line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            line,
            message: message.into(),
        }
    }

    pub(crate) fn row(row: usize, message: impl Into<String>) -> Self {
        Error::Row {
            row,
            message: message.into(),
        }
    }

    /// Attaches the file the error came from.
    pub fn in_file(self, path: impl Into<PathBuf>) -> Self {
        Error::File {
            path: path.into(),
            source: Box::new(self),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
