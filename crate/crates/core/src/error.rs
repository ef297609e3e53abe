//! Crate-wide error type.

use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("row {row}, column `{column}`: {message}")]
    CsvData {
        row: usize,
        column: String,
        message: String,
    },

    #[error("missing required column `{0}`")]
    MissingColumn(String),

    #[error("unknown covariate `{0}`")]
    UnknownCovariate(String),

    #[error("column names do not match the fitted model: {0}")]
    ColumnMismatch(String),

    #[error("leverage within 1e-10 of 1 at row {0}; leave-one-out residual undefined")]
    LeverageAtOne(usize),

    #[error("no tasks survive the minimum size threshold")]
    NoTasks,

    #[error("task {task}: {message}")]
    TaskTooSmall { task: String, message: String },

    #[error("task {task} violates n > d for model of dimension {dimension} (n = {n})")]
    CpPrecondition {
        task: String,
        n: usize,
        dimension: usize,
    },

    #[error("no candidate model satisfies the preconditions")]
    NoCandidates,

    #[error("selection rule has no range covering n = {0}")]
    RuleGap(usize),

    #[error("coordinate descent did not converge after {sweeps} sweeps at lambda = {lambda}")]
    NonConvergence { lambda: f64, sweeps: usize },

    #[error("fold too small: n = {n} with k = {k} leaves fewer rows than the model dimension {dimension}")]
    FoldTooSmall { n: usize, k: usize, dimension: usize },

    #[error("all points share one sample size; an explicit bandwidth is required")]
    BandwidthRequired,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{}: {message}", path.display())]
    Format { path: PathBuf, message: String },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            message: message.into(),
        }
    }

    /// True for failures of the numerical machinery (as opposed to bad input data).
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::LeverageAtOne(_)
                | Error::TaskTooSmall { .. }
                | Error::CpPrecondition { .. }
                | Error::NoCandidates
                | Error::RuleGap(_)
                | Error::NonConvergence { .. }
                | Error::FoldTooSmall { .. }
                | Error::BandwidthRequired
        )
    }
}
