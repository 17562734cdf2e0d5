//! Distributed trajectory similarity join.

pub mod engine;
pub mod error;
pub mod generate;
pub mod geometry;
pub mod index;
pub mod io;
pub mod join;
pub mod model;
pub mod oracle;
pub mod partitioning;
pub mod refine;

pub use error::{Error, Result};
pub use model::{JoinParams, MatchPair, PairRecord, Subtrajectory, TrajId, Trajectory, TrajectoryPoint};
