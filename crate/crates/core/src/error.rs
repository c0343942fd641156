use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("schema line {line}: {msg}")]
    Schema { line: usize, msg: String },

    #[error("dataset row {row}: {msg}")]
    Dataset { row: usize, msg: String },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("unknown attribute `{0}`")]
    UnknownAttribute(String),

    #[error("attribute `{name}` is {actual}, expected {expected}")]
    AttributeKind {
        name: String,
        expected: &'static str,
        actual: &'static str,
    },

    #[error("split: side too small (calibration {calibration}, test {test}; both need >= 2)")]
    SideTooSmall { calibration: usize, test: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("training failed: {0}")]
    Training(String),

    #[error("loss diverged (non-finite) at epoch {epoch}")]
    Diverged { epoch: usize },

    #[error("predictions row {row}: {msg}")]
    Predictions { row: usize, msg: String },

    #[error("misaligned records: {0}")]
    Misaligned(String),

    #[error("empty score list")]
    EmptyScores,

    #[error("class index {index} out of range for {classes} classes")]
    ClassIndex { index: usize, classes: usize },

    #[error("invalid interval: lo {lo} > hi {hi}")]
    InvertedInterval { lo: f64, hi: f64 },

    #[error("calibration set too small for alpha: conformal quantile is unbounded")]
    UnboundedQuantile,

    #[error("method/task mismatch: score method `{method}` does not apply to {task} tasks")]
    MethodTaskMismatch {
        method: &'static str,
        task: &'static str,
    },

    #[error("empty member set")]
    EmptySubgroup,

    #[error("report: {0}")]
    Report(String),

    #[error("{stage} stage: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    /// Input or configuration problems, as opposed to failures while computing
    /// or writing output.
    pub fn is_validation(&self) -> bool {
        if let Error::Stage { source, .. } = self {
            return source.is_validation();
        }
        matches!(
            self,
            Error::Io { .. }
                | Error::Schema { .. }
                | Error::Dataset { .. }
                | Error::Csv(_)
                | Error::UnknownAttribute(_)
                | Error::AttributeKind { .. }
                | Error::SideTooSmall { .. }
                | Error::InvalidParameter(_)
                | Error::Predictions { .. }
                | Error::Misaligned(_)
                | Error::MethodTaskMismatch { .. }
                | Error::InvertedInterval { .. }
                | Error::ClassIndex { .. }
        )
    }

    pub fn stage(self, stage: &'static str) -> Self {
        match self {
            Error::Stage { .. } => self,
            other => Error::Stage {
                stage,
                source: Box::new(other),
            },
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
