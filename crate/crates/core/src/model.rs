//! Domain types shared by every pipeline.
//!
//! Points are identified by `(traj_id, t)`: timestamps strictly increase within
//! a trajectory, so the pair is unique across a dataset.

use std::cmp::Ordering;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Opaque trajectory identifier. Ordered lexicographically on its bytes.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TrajId(Arc<str>);

impl TrajId {
    pub fn new(id: impl AsRef<str>) -> Self {
        TrajId(Arc::from(id.as_ref()))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Debug for TrajId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", &*self.0)
    }
}

impl fmt::Display for TrajId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for TrajId {
    fn from(s: &str) -> Self {
        TrajId::new(s)
    }
}

impl From<String> for TrajId {
    fn from(s: String) -> Self {
        TrajId(Arc::from(s))
    }
}

/// One timestamped planar sample.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryPoint {
    pub traj_id: TrajId,
    pub t: f64,
    pub x: f64,
    pub y: f64,
    /// True iff the point lies in its task's original (non-expanded) partition.
    #[serde(default)]
    pub orig_flag: bool,
    /// Original quadtree leaf, assigned by the indexed join only.
    #[serde(default)]
    pub cell_id: Option<u32>,
}

impl TrajectoryPoint {
    pub fn new(traj_id: impl Into<TrajId>, t: f64, x: f64, y: f64) -> Self {
        TrajectoryPoint {
            traj_id: traj_id.into(),
            t,
            x,
            y,
            orig_flag: true,
            cell_id: None,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.t.is_finite() && self.x.is_finite() && self.y.is_finite()
    }

    pub fn key(&self) -> PointKey {
        PointKey {
            traj_id: self.traj_id.clone(),
            t: self.t,
        }
    }

    /// Same sample, provenance flags reset.
    pub fn bare(&self) -> TrajectoryPoint {
        TrajectoryPoint {
            orig_flag: true,
            cell_id: None,
            ..self.clone()
        }
    }
}

/// Identity of a point, totally ordered by `(traj_id, t)`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PointKey {
    pub traj_id: TrajId,
    pub t: f64,
}

impl PartialEq for PointKey {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for PointKey {}

impl PartialOrd for PointKey {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for PointKey {
    fn cmp(&self, other: &Self) -> Ordering {
        self.traj_id
            .cmp(&other.traj_id)
            .then(self.t.total_cmp(&other.t))
    }
}

impl std::hash::Hash for PointKey {
    fn hash<H: std::hash::Hasher>(&self, state: &mut H) {
        self.traj_id.hash(state);
        self.t.to_bits().hash(state);
    }
}

/// A whole trajectory, points sorted by strictly increasing time.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub id: TrajId,
    pub points: Vec<TrajectoryPoint>,
}

impl Trajectory {
    pub fn new(id: impl Into<TrajId>, points: Vec<TrajectoryPoint>) -> Result<Self> {
        let id = id.into();
        if points.is_empty() {
            return Err(Error::InvalidTrajectory(format!("`{id}` has no points")));
        }
        for (i, p) in points.iter().enumerate() {
            if p.traj_id != id {
                return Err(Error::InvalidTrajectory(format!(
                    "point {i} belongs to `{}`, expected `{id}`",
                    p.traj_id
                )));
            }
            if !p.is_finite() {
                return Err(Error::InvalidTrajectory(format!(
                    "`{id}` point {i} has a non-finite coordinate"
                )));
            }
            if i > 0 && points[i - 1].t >= p.t {
                return Err(Error::DuplicateTimestamp {
                    traj: id.clone(),
                    t: p.t,
                });
            }
        }
        Ok(Trajectory { id, points })
    }

    /// Builds a trajectory from `(t, x, y)` samples.
    pub fn from_samples(id: impl Into<TrajId>, samples: &[(f64, f64, f64)]) -> Result<Self> {
        let id = id.into();
        let points = samples
            .iter()
            .map(|&(t, x, y)| TrajectoryPoint::new(id.clone(), t, x, y))
            .collect();
        Trajectory::new(id, points)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn first(&self) -> &TrajectoryPoint {
        &self.points[0]
    }

    pub fn last(&self) -> &TrajectoryPoint {
        &self.points[self.points.len() - 1]
    }

    /// Position of the sample taken at exactly `t`.
    pub fn index_of(&self, t: f64) -> Option<usize> {
        self.points
            .binary_search_by(|p| p.t.total_cmp(&t))
            .ok()
    }
}

/// A contiguous run of one trajectory, identified by its first and last
/// timestamps so that it can be reported without knowing point indices.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Subtrajectory {
    pub traj_id: TrajId,
    pub start_t: f64,
    pub end_t: f64,
}

impl Subtrajectory {
    pub fn new(traj_id: impl Into<TrajId>, start_t: f64, end_t: f64) -> Self {
        Subtrajectory {
            traj_id: traj_id.into(),
            start_t,
            end_t,
        }
    }

    /// Subtrajectory `traj[start_idx..=end_idx]`.
    pub fn from_indices(traj: &Trajectory, start_idx: usize, end_idx: usize) -> Self {
        assert!(start_idx <= end_idx && end_idx < traj.len());
        Subtrajectory::new(
            traj.id.clone(),
            traj.points[start_idx].t,
            traj.points[end_idx].t,
        )
    }

    /// Resolves `(start_idx, end_idx)` against the parent trajectory.
    pub fn indices(&self, traj: &Trajectory) -> Option<(usize, usize)> {
        if traj.id != self.traj_id {
            return None;
        }
        Some((traj.index_of(self.start_t)?, traj.index_of(self.end_t)?))
    }

    pub fn span(&self) -> Interval {
        Interval::new(self.start_t, self.end_t)
    }
}

impl PartialEq for Subtrajectory {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Subtrajectory {}

impl PartialOrd for Subtrajectory {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Subtrajectory {
    fn cmp(&self, other: &Self) -> Ordering {
        self.traj_id
            .cmp(&other.traj_id)
            .then(self.start_t.total_cmp(&other.start_t))
            .then(self.end_t.total_cmp(&other.end_t))
    }
}

impl std::hash::Hash for Subtrajectory {
    fn hash<H: std::hash::Hasher>(&self, state: &mut H) {
        self.traj_id.hash(state);
        self.start_t.to_bits().hash(state);
        self.end_t.to_bits().hash(state);
    }
}

/// Spatial threshold, temporal tolerance and minimum duration of a match.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct JoinParams {
    pub eps_sp: f64,
    pub eps_t: f64,
    pub delta_t: f64,
}

impl JoinParams {
    pub fn new(eps_sp: f64, eps_t: f64, delta_t: f64) -> Result<Self> {
        for (name, v) in [("eps_sp", eps_sp), ("eps_t", eps_t), ("delta_t", delta_t)] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::InvalidParams(format!(
                    "{name} must be finite and non-negative, got {v}"
                )));
            }
        }
        Ok(JoinParams {
            eps_sp,
            eps_t,
            delta_t,
        })
    }

    /// Minimum common-lifespan duration a matching pair must reach,
    /// `delta_t - 2 * eps_t`. May be negative.
    pub fn min_lifespan(&self) -> f64 {
        self.delta_t - 2.0 * self.eps_t
    }

    /// Sliding-window duration used by refine, `max(delta_t - 2 * eps_t, 0)`.
    pub fn effective_window(&self) -> f64 {
        self.min_lifespan().max(0.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub t_start: f64,
    pub t_end: f64,
}

impl Interval {
    pub fn new(t_start: f64, t_end: f64) -> Self {
        Interval { t_start, t_end }
    }

    /// Negative when the interval is the "empty lifespan" signal.
    pub fn duration(&self) -> f64 {
        self.t_end - self.t_start
    }

    pub fn contains(&self, t: f64) -> bool {
        self.t_start <= t && t <= self.t_end
    }
}

/// What a [`PairRecord`] encodes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum RecordKind {
    /// Joining pair: `(p, q, true)`.
    Joining,
    /// Breaking point: `(p, null, true)`.
    Breaking,
    /// Candidate non-joining neighbour: `(p, q, false)`.
    CandidateNonJoining,
}

/// Unit emitted by the join phase.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairRecord {
    pub ref_point: TrajectoryPoint,
    pub other_point: Option<TrajectoryPoint>,
    pub flag: bool,
}

impl PairRecord {
    pub fn joining(ref_point: TrajectoryPoint, other: TrajectoryPoint) -> Self {
        debug_assert_ne!(ref_point.traj_id, other.traj_id);
        PairRecord {
            ref_point,
            other_point: Some(other),
            flag: true,
        }
    }

    pub fn breaking(ref_point: TrajectoryPoint) -> Self {
        PairRecord {
            ref_point,
            other_point: None,
            flag: true,
        }
    }

    pub fn candidate(ref_point: TrajectoryPoint, other: TrajectoryPoint) -> Self {
        debug_assert_ne!(ref_point.traj_id, other.traj_id);
        PairRecord {
            ref_point,
            other_point: Some(other),
            flag: false,
        }
    }

    pub fn kind(&self) -> RecordKind {
        match (self.flag, &self.other_point) {
            (true, None) => RecordKind::Breaking,
            (true, Some(_)) => RecordKind::Joining,
            (false, _) => RecordKind::CandidateNonJoining,
        }
    }

    /// Identity of the record, ignoring provenance flags.
    pub fn key(&self) -> RecordKey {
        RecordKey {
            ref_point: self.ref_point.key(),
            other_point: self.other_point.as_ref().map(TrajectoryPoint::key),
            flag: self.flag,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct RecordKey {
    pub ref_point: PointKey,
    pub other_point: Option<PointKey>,
    pub flag: bool,
}

/// One maximal matching subtrajectory pair.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct MatchPair {
    pub sub_r: Subtrajectory,
    pub sub_s: Subtrajectory,
}

impl MatchPair {
    pub fn new(sub_r: Subtrajectory, sub_s: Subtrajectory) -> Self {
        MatchPair { sub_r, sub_s }
    }

    /// Common lifespan of the two sides.
    pub fn lifespan(&self) -> Interval {
        Interval::new(
            self.sub_r.start_t.max(self.sub_s.start_t),
            self.sub_r.end_t.min(self.sub_s.end_t),
        )
    }

    /// Unordered form: the side with the smaller trajectory id comes first.
    pub fn canonical(self) -> Self {
        if self.sub_s.traj_id < self.sub_r.traj_id {
            MatchPair {
                sub_r: self.sub_s,
                sub_s: self.sub_r,
            }
        } else {
            self
        }
    }
}

/// Small hand-checkable datasets used throughout tests and docs.
pub mod fixtures {
    use super::*;

    /// `r` and `s` move in parallel 0.5 apart for t = 0..4; `u` is a lone far point.
    pub fn t1() -> (Vec<Trajectory>, JoinParams) {
        let r: Vec<_> = (0..5).map(|t| (t as f64, t as f64, 0.0)).collect();
        let s: Vec<_> = (0..5).map(|t| (t as f64, t as f64, 0.5)).collect();
        let trajs = vec![
            Trajectory::from_samples("r", &r).unwrap(),
            Trajectory::from_samples("s", &s).unwrap(),
            Trajectory::from_samples("u", &[(2.0, 100.0, 100.0)]).unwrap(),
        ];
        (trajs, JoinParams::new(1.0, 0.5, 3.0).unwrap())
    }

    /// Like `t1` over t = 0..6, but `s` jumps away at t = 3.
    pub fn t2() -> (Vec<Trajectory>, JoinParams) {
        let r: Vec<_> = (0..7).map(|t| (t as f64, t as f64, 0.0)).collect();
        let s: Vec<_> = (0..7)
            .map(|t| {
                if t == 3 {
                    (3.0, 3.0, 50.0)
                } else {
                    (t as f64, t as f64, 0.5)
                }
            })
            .collect();
        let trajs = vec![
            Trajectory::from_samples("r", &r).unwrap(),
            Trajectory::from_samples("s", &s).unwrap(),
        ];
        (trajs, JoinParams::new(1.0, 0.5, 3.0).unwrap())
    }

    /// Flattens trajectories into one stream sorted by `(t, traj_id)`.
    pub fn flatten(trajs: &[Trajectory]) -> Vec<TrajectoryPoint> {
        let mut pts: Vec<_> = trajs.iter().flat_map(|t| t.points.iter().cloned()).collect();
        pts.sort_by(|a, b| a.t.total_cmp(&b.t).then_with(|| a.traj_id.cmp(&b.traj_id)));
        pts
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trajectory_rejects_duplicate_timestamps() {
        let err = Trajectory::from_samples("a", &[(0.0, 0.0, 0.0), (0.0, 1.0, 1.0)]).unwrap_err();
        assert!(matches!(err, Error::DuplicateTimestamp { .. }));
    }

    #[test]
    fn trajectory_rejects_empty_and_nan() {
        assert!(Trajectory::new("a", vec![]).is_err());
        assert!(Trajectory::from_samples("a", &[(0.0, f64::NAN, 0.0)]).is_err());
    }

    #[test]
    fn params_validate() {
        assert!(JoinParams::new(-1.0, 0.0, 0.0).is_err());
        assert!(JoinParams::new(1.0, f64::INFINITY, 0.0).is_err());
        let p = JoinParams::new(1.0, 2.0, 3.0).unwrap();
        assert_eq!(p.min_lifespan(), -1.0);
        assert_eq!(p.effective_window(), 0.0);
    }

    #[test]
    fn record_kinds_are_exclusive() {
        let a = TrajectoryPoint::new("a", 0.0, 0.0, 0.0);
        let b = TrajectoryPoint::new("b", 0.0, 0.0, 0.0);
        assert_eq!(PairRecord::joining(a.clone(), b.clone()).kind(), RecordKind::Joining);
        assert_eq!(PairRecord::breaking(a.clone()).kind(), RecordKind::Breaking);
        assert_eq!(
            PairRecord::candidate(a, b).kind(),
            RecordKind::CandidateNonJoining
        );
    }

    #[test]
    fn canonical_orders_by_id() {
        let m = MatchPair::new(Subtrajectory::new("s", 0.0, 1.0), Subtrajectory::new("r", 0.0, 2.0));
        let c = m.canonical();
        assert_eq!(c.sub_r.traj_id.as_str(), "r");
        assert_eq!(c.lifespan(), Interval::new(0.0, 1.0));
    }

    #[test]
    fn subtrajectory_index_resolution() {
        let (trajs, _) = fixtures::t2();
        let sub = Subtrajectory::from_indices(&trajs[0], 4, 6);
        assert_eq!(sub.indices(&trajs[0]), Some((4, 6)));
        assert_eq!(sub.indices(&trajs[1]), None);
    }

    #[test]
    fn serde_round_trip() {
        let p = TrajectoryPoint::new("a", 1.5, 2.0, -3.0);
        let rec = PairRecord::candidate(p.clone(), TrajectoryPoint::new("b", 1.0, 0.0, 0.0));
        let json = serde_json::to_string(&rec).unwrap();
        assert_eq!(serde_json::from_str::<PairRecord>(&json).unwrap(), rec);
        let m = MatchPair::new(Subtrajectory::new("a", 0.0, 1.0), Subtrajectory::new("b", 0.5, 1.0));
        let json = serde_json::to_string(&m).unwrap();
        assert_eq!(serde_json::from_str::<MatchPair>(&json).unwrap(), m);
    }
}
