use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Coarse classification used by the command line front-end for exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Data,
    Numerical,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("failed to access {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("config: {0}")]
    Config(String),
    #[error("missing column `{0}` in input header")]
    MissingColumn(String),
    #[error("duplicate timestamp {0}")]
    DuplicateTimestamp(String),
    #[error("non-monotone timestamp {0} follows {1}")]
    NonMonotone(String, String),
    #[error("malformed timestamp `{0}`")]
    BadTimestamp(String),
    #[error("fall-back day {0} has more than one duplicated hour")]
    AmbiguousFallBack(String),
    #[error("series too short: need at least {need} days, have {have}")]
    SeriesTooShort { need: usize, have: usize },
    #[error("zero variance in column {0}")]
    ZeroVariance(usize),
    #[error("empty {0}")]
    Empty(&'static str),
    #[error("overlapping or unordered split ranges: {0}")]
    BadSplit(String),
    #[error("insufficient history: need {need} days before {as_of}, data starts {first}")]
    InsufficientHistory {
        need: usize,
        as_of: String,
        first: String,
    },
    #[error("missing data for {0}")]
    MissingData(String),
    #[error("non-finite input: {0}")]
    NonFinite(&'static str),
    #[error("did not converge after {iterations} iterations (last change {last_delta:e})")]
    NonConvergence { iterations: usize, last_delta: f64 },
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("training diverged at epoch {0}")]
    Diverged(usize),
    #[error("invalid argument: {0}")]
    Invalid(String),
    #[error("stage {stage}: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Tags an error with the pipeline stage it came from.
    pub fn in_stage(self, stage: impl Into<String>) -> Self {
        Error::Stage {
            stage: stage.into(),
            source: Box::new(self),
        }
    }

    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Stage { source, .. } => source.kind(),
            Error::Config(_) | Error::Invalid(_) | Error::BadSplit(_) => ErrorKind::Config,
            Error::NonConvergence { .. }
            | Error::Degenerate(_)
            | Error::Diverged(_)
            | Error::ZeroVariance(_) => ErrorKind::Numerical,
            _ => ErrorKind::Data,
        }
    }
}
