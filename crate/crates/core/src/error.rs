use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// Malformed or invalid table content, located by file, line and column.
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("row-count mismatch: {what} has {found} rows, expected {expected}")]
    RowCountMismatch {
        what: String,
        expected: usize,
        found: usize,
    },

    #[error("duplicate grid coordinate ({row}, {col}) for spots {first} and {second}")]
    DuplicateGridCoordinate {
        row: i64,
        col: i64,
        first: String,
        second: String,
    },

    #[error("missing spot ids: {}", .0.join(", "))]
    MissingSpots(Vec<String>),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("graph invariant violated: {0}")]
    GraphInvariant(String),

    #[error("training diverged at replicate {replicate}, epoch {epoch}: loss is {loss}")]
    Diverged {
        replicate: usize,
        epoch: usize,
        loss: f64,
    },

    #[error("fewer samples than folds ({samples} < {folds})")]
    TooFewSamples { samples: usize, folds: usize },

    #[error("gene {gene:?} not in panel; available: {}", .available.join(", "))]
    UnknownGene {
        gene: String,
        available: Vec<String>,
    },

    #[error("infeasible synthetic spec: {0}")]
    InfeasibleSpec(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("config: {0}")]
    Config(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            message: message.into(),
        }
    }
}
