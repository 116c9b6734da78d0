//! Error type shared by every stage of the pipeline.

use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("zero-norm vector{}", row.map(|r| format!(" at row {r}")).unwrap_or_default())]
    ZeroVector { row: Option<usize> },

    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("temperature must be positive, got {0}")]
    NonPositiveTemperature(f64),

    #[error("non-finite value produced at stage `{stage}`")]
    NonFinite { stage: &'static str },

    #[error("cache was produced for a different parameter state")]
    StaleCache,

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("within-class scatter is numerically singular")]
    SingularScatter,

    #[error("silhouette needs at least two non-empty clusters, found {0}")]
    SingleCluster(usize),

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("label {label} out of range for {classes} classes")]
    OutOfRangeLabel { label: usize, classes: usize },

    #[error("no exemplar or anchor for class `{0}`")]
    MissingClass(String),

    #[error("label `{0}` is assigned to neither the seen nor the unseen split")]
    UnassignedLabel(String),

    #[error("vMF sampling needs dimension >= 2, got {0}")]
    BadDimension(usize),

    #[error("invalid probability vector: {0}")]
    InvalidProbability(String),

    #[error("{}:{line}:{column}: {reason}", path.display())]
    Parse {
        path: PathBuf,
        line: usize,
        column: usize,
        reason: String,
    },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("gradient check failed: {0}")]
    GradcheckFailed(String),

    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Tags the error with the pipeline stage it came from.
    pub fn in_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }

    /// The error with every stage tag removed.
    pub fn root(&self) -> &Error {
        match self {
            Error::Stage { source, .. } => source.root(),
            other => other,
        }
    }

    /// Process exit code: 1 usage, 2 data, 3 numerical failure.
    pub fn exit_code(&self) -> i32 {
        match self.root() {
            Error::InvalidConfig(_) => 1,
            Error::ZeroVector { .. }
            | Error::NonPositiveTemperature(_)
            | Error::NonFinite { .. }
            | Error::StaleCache
            | Error::SingularScatter
            | Error::GradcheckFailed(_) => 3,
            _ => 2,
        }
    }
}

/// Adds a stage tag to the error of a result.
pub trait StageContext<T> {
    fn stage(self, stage: &'static str) -> Result<T>;
}

impl<T> StageContext<T> for Result<T> {
    fn stage(self, stage: &'static str) -> Result<T> {
        self.map_err(|e| e.in_stage(stage))
    }
}
