use std::path::PathBuf;

use crate::model::TrajId;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid join parameters: {0}")]
    InvalidParams(String),

    #[error("invalid trajectory: {0}")]
    InvalidTrajectory(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A point-level predicate was asked to compare a trajectory with itself.
    #[error("points of the same trajectory `{0}` cannot form a joining pair")]
    SameTrajectory(TrajId),

    #[error("partition input is not sorted by time at position {position} ({prev} > {next})")]
    UnsortedInput { position: usize, prev: f64, next: f64 },

    #[error("refine stream for `{traj}` is not sorted at record {position}")]
    UnsortedStream { traj: TrajId, position: usize },

    #[error("unknown trajectory `{0}`")]
    UnknownTrajectory(TrajId),

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: u64,
        msg: String,
    },

    #[error("trajectory `{traj}` has a duplicate timestamp {t}")]
    DuplicateTimestamp { traj: TrajId, t: f64 },

    #[error("missing preprocessing artifacts: {0}")]
    MissingPreprocessing(String),

    #[error("manifest error: {0}")]
    Manifest(String),

    #[error("task {task} failed: {msg}")]
    TaskFailed { task: String, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
