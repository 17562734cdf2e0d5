//! Distances and the matching predicates.
//!
//! All comparisons against thresholds are inclusive (`<=`), with no tolerance
//! added at the boundary.

use crate::error::{Error, Result};
use crate::model::{Interval, JoinParams, Trajectory, TrajectoryPoint};

/// Euclidean distance in the plane.
pub fn dist_s(p: &TrajectoryPoint, q: &TrajectoryPoint) -> f64 {
    (p.x - q.x).hypot(p.y - q.y)
}

/// Absolute time difference.
pub fn dist_t(p: &TrajectoryPoint, q: &TrajectoryPoint) -> f64 {
    (p.t - q.t).abs()
}

/// `[max(first starts), min(last ends)]`; a negative duration means the
/// lifespans are disjoint.
pub fn common_lifespan(r: &Trajectory, s: &Trajectory) -> Interval {
    Interval::new(r.first().t.max(s.first().t), r.last().t.min(s.last().t))
}

/// Whether `p` and `q` form a joining pair under `params`.
///
/// Fails if both points belong to the same trajectory.
pub fn is_joining_pair(p: &TrajectoryPoint, q: &TrajectoryPoint, params: &JoinParams) -> Result<bool> {
    if p.traj_id == q.traj_id {
        return Err(Error::SameTrajectory(p.traj_id.clone()));
    }
    Ok(within(p, q, params))
}

/// The join predicate without the cross-trajectory contract check.
#[inline]
pub(crate) fn within(p: &TrajectoryPoint, q: &TrajectoryPoint, params: &JoinParams) -> bool {
    dist_t(p, q) <= params.eps_t && dist_s(p, q) <= params.eps_sp
}
