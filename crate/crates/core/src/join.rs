//! The plane-sweep join kernel.
//!
//! A task loads one partition (or split) into a time-sorted buffer and sweeps
//! it point by point. For every point, the `eps_t` window before it is scanned
//! for points of other trajectories within `eps_sp`; each hit is a joining
//! pair. For every hit the kernel also looks at the previous sample of each
//! side and, if that sample has no partner in the other side's trajectory,
//! reports it as a candidate non-joining neighbour (flag `false`). Points left
//! without any partner become breaking points.
//!
//! Every buffered point is swept, including the replicated border points.
//! A record is only emitted when its reference point passes the task's
//! duplicate check, so each record is produced by exactly one task.

use std::collections::{HashMap, HashSet};

use crate::error::{Error, Result};
use crate::geometry::within;
use crate::model::{JoinParams, PairRecord, TrajId, TrajectoryPoint};
use crate::partitioning::{time_order, Split, TemporalPartition};

/// How a task decides which records it is responsible for.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DupMode {
    /// The reference point must carry `orig_flag` (uniform partitioning).
    Flag,
    /// The reference point must lie in the unit's base range (splits).
    BaseRange,
}

/// Input of one join task.
pub trait JoinUnit {
    /// Points of the (expanded) range, sorted by time.
    fn points(&self) -> &[TrajectoryPoint];
    /// Probe-only neighbours outside the range.
    fn context(&self) -> &[TrajectoryPoint];
    /// Base-range membership.
    fn owns(&self, t: f64) -> bool;
}

impl JoinUnit for TemporalPartition {
    fn points(&self) -> &[TrajectoryPoint] {
        &self.points
    }
    fn context(&self) -> &[TrajectoryPoint] {
        &self.context
    }
    fn owns(&self, t: f64) -> bool {
        TemporalPartition::owns(self, t)
    }
}

impl JoinUnit for Split {
    fn points(&self) -> &[TrajectoryPoint] {
        &self.points
    }
    fn context(&self) -> &[TrajectoryPoint] {
        &self.context
    }
    fn owns(&self, t: f64) -> bool {
        Split::owns(self, t)
    }
}

/// The time-sorted buffer `D` of a join task plus its bookkeeping.
///
/// Trajectory ids are interned to dense integers for the duration of the task.
#[derive(Debug)]
pub struct JoinBuffer {
    pub(crate) d: Vec<TrajectoryPoint>,
    pub(crate) traj: Vec<u32>,
    pub(crate) probe_only: Vec<bool>,
    pub(crate) owned: Vec<bool>,
    matched: Vec<bool>,
    first_pos: Vec<usize>,
    last_pos: Vec<usize>,
    last_jp: Vec<Option<usize>>,
    ids: HashMap<TrajId, u32>,
}

impl JoinBuffer {
    pub fn new(unit: &impl JoinUnit, dup: DupMode) -> Result<Self> {
        let points = unit.points();
        for (i, w) in points.windows(2).enumerate() {
            if w[1].t < w[0].t {
                return Err(Error::UnsortedInput {
                    position: i + 1,
                    prev: w[0].t,
                    next: w[1].t,
                });
            }
        }
        let mut all: Vec<(TrajectoryPoint, bool)> = points
            .iter()
            .map(|p| (p.clone(), false))
            .chain(unit.context().iter().map(|p| (p.clone(), true)))
            .collect();
        all.sort_by(|a, b| time_order(&a.0, &b.0));

        let n = all.len();
        let mut buf = JoinBuffer {
            d: Vec::with_capacity(n),
            traj: Vec::with_capacity(n),
            probe_only: Vec::with_capacity(n),
            owned: Vec::with_capacity(n),
            matched: vec![false; n],
            first_pos: Vec::new(),
            last_pos: Vec::new(),
            last_jp: Vec::new(),
            ids: HashMap::new(),
        };
        for (pos, (p, ctx)) in all.into_iter().enumerate() {
            let next_id = buf.ids.len() as u32;
            let id = *buf.ids.entry(p.traj_id.clone()).or_insert(next_id);
            if id == next_id {
                buf.first_pos.push(pos);
                buf.last_pos.push(pos);
                buf.last_jp.push(None);
            }
            buf.last_pos[id as usize] = pos;
            let owned = !ctx
                && match dup {
                    DupMode::Flag => p.orig_flag,
                    DupMode::BaseRange => unit.owns(p.t),
                };
            buf.traj.push(id);
            buf.probe_only.push(ctx);
            buf.owned.push(owned);
            buf.d.push(p);
        }
        Ok(buf)
    }

    pub fn len(&self) -> usize {
        self.d.len()
    }

    pub fn is_empty(&self) -> bool {
        self.d.is_empty()
    }

    /// Dense id of a trajectory within this buffer.
    pub fn traj_index(&self, id: &TrajId) -> Option<u32> {
        self.ids.get(id).copied()
    }

    pub fn point(&self, pos: usize) -> &TrajectoryPoint {
        &self.d[pos]
    }

    pub fn trajectory_count(&self) -> usize {
        self.first_pos.len()
    }

    /// Points that can be referenced or swept (context excluded).
    pub fn swept_len(&self) -> usize {
        self.probe_only.iter().filter(|c| !**c).count()
    }

    /// Swept points still without a partner.
    pub fn breaking_candidates(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.len()).filter(|&i| !self.probe_only[i] && !self.matched[i])
    }

    /// Positions `[lo, hi)` with `|t - t_k| <= eps_t`.
    pub(crate) fn time_window(&self, k: usize, eps_t: f64) -> (usize, usize) {
        let t = self.d[k].t;
        let lo = self.d[..k].partition_point(|p| p.t < t - eps_t);
        let hi = k + self.d[k..].partition_point(|p| p.t <= t + eps_t);
        (lo, hi)
    }
}

/// Lookups the sweep needs; the linear-scan and the indexed kernels differ
/// only here.
pub(crate) trait Probe {
    /// Earlier swept positions within `eps_t` of `i`, newest first.
    fn candidates(&self, buf: &JoinBuffer, i: usize, params: &JoinParams, out: &mut Vec<usize>);
    fn prev_of(&self, buf: &JoinBuffer, pos: usize) -> Option<usize>;
    fn next_of(&self, buf: &JoinBuffer, pos: usize) -> Option<usize>;
    /// Whether trajectory `anchor` has a point joining `D[k]`.
    fn find_match(&self, buf: &JoinBuffer, anchor: u32, k: usize, params: &JoinParams) -> bool;
}

/// The non-indexed lookups: linear scans over `D`.
pub(crate) struct Scan;

impl Probe for Scan {
    fn candidates(&self, buf: &JoinBuffer, i: usize, params: &JoinParams, out: &mut Vec<usize>) {
        let lo = buf.d[i].t - params.eps_t;
        for j in (0..i).rev() {
            if buf.d[j].t < lo {
                break;
            }
            if !buf.probe_only[j] {
                out.push(j);
            }
        }
    }

    fn prev_of(&self, buf: &JoinBuffer, pos: usize) -> Option<usize> {
        let id = buf.traj[pos];
        let first = buf.first_pos[id as usize];
        (first..pos).rev().find(|&k| buf.traj[k] == id)
    }

    fn next_of(&self, buf: &JoinBuffer, pos: usize) -> Option<usize> {
        let id = buf.traj[pos];
        let last = buf.last_pos[id as usize];
        (pos + 1..=last).find(|&k| buf.traj[k] == id)
    }

    fn find_match(&self, buf: &JoinBuffer, anchor: u32, k: usize, params: &JoinParams) -> bool {
        find_match(buf, anchor, k, params)
    }
}

/// Scans `D` around position `k` for a point of trajectory `anchor` joining `D[k]`.
pub fn find_match(buf: &JoinBuffer, anchor: u32, k: usize, params: &JoinParams) -> bool {
    let p = &buf.d[k];
    let lo = p.t - params.eps_t;
    let hi = p.t + params.eps_t;
    let hit = |j: usize| buf.traj[j] == anchor && within(p, &buf.d[j], params);
    (0..k).rev().take_while(|&j| buf.d[j].t >= lo).any(hit)
        || (k + 1..buf.len()).take_while(|&j| buf.d[j].t <= hi).any(hit)
}

/// Linear backward scan for the previous point of `D[pos]`'s trajectory.
pub fn get_prev_tr_point(buf: &JoinBuffer, pos: usize) -> Option<usize> {
    Scan.prev_of(buf, pos)
}

/// Collects records, dropping repeated candidate records within the task.
struct Emitter {
    out: Vec<PairRecord>,
    seen_false: HashSet<(usize, usize)>,
}

impl Emitter {
    fn joining(&mut self, buf: &JoinBuffer, r: usize, o: usize) {
        self.out.push(PairRecord::joining(buf.d[r].bare(), buf.d[o].bare()));
    }

    fn candidate(&mut self, buf: &JoinBuffer, r: usize, o: usize) {
        if self.seen_false.insert((r, o)) {
            self.out.push(PairRecord::candidate(buf.d[r].bare(), buf.d[o].bare()));
        }
    }
}

/// One sweep step for the newest point `i`.
fn plane_sweep_step<P: Probe>(
    buf: &mut JoinBuffer,
    probe: &P,
    i: usize,
    params: &JoinParams,
    scratch: &mut Vec<usize>,
    em: &mut Emitter,
) {
    scratch.clear();
    probe.candidates(buf, i, params, scratch);
    for &j in scratch.iter() {
        if buf.traj[j] == buf.traj[i] || !within(&buf.d[i], &buf.d[j], params) {
            continue;
        }
        if buf.owned[i] {
            em.joining(buf, i, j);
        }
        if buf.owned[j] {
            em.joining(buf, j, i);
        }
        buf.matched[i] = true;
        buf.matched[j] = true;
        for a in [i, j] {
            let slot = &mut buf.last_jp[buf.traj[a] as usize];
            if slot.is_none_or(|l| l < a) {
                *slot = Some(a);
            }
        }
        // previous sample of each side, checked against the other trajectory
        if buf.owned[i] {
            if let Some(k) = probe.prev_of(buf, j) {
                if !probe.find_match(buf, buf.traj[i], k, params) {
                    em.candidate(buf, i, k);
                }
            }
        }
        if buf.owned[j] {
            if let Some(k) = probe.prev_of(buf, i) {
                if !probe.find_match(buf, buf.traj[j], k, params) {
                    em.candidate(buf, j, k);
                }
            }
        }
    }
}

/// For each trajectory's last joining point, checks the sample following each
/// of its partners, the forward mirror of the previous-point probe.
fn treat_last_tr_points<P: Probe>(buf: &JoinBuffer, probe: &P, params: &JoinParams, em: &mut Emitter) {
    for a in buf.last_jp.iter().flatten().copied() {
        if !buf.owned[a] {
            continue;
        }
        let (lo, hi) = buf.time_window(a, params.eps_t);
        for q in lo..hi {
            if buf.probe_only[q] || buf.traj[q] == buf.traj[a] || !within(&buf.d[a], &buf.d[q], params) {
                continue;
            }
            if let Some(n) = probe.next_of(buf, q) {
                if !probe.find_match(buf, buf.traj[a], n, params) {
                    em.candidate(buf, a, n);
                }
            }
        }
    }
}

/// Runs the full sweep over a prepared buffer.
pub(crate) fn sweep<P: Probe>(buf: &mut JoinBuffer, probe: &P, params: &JoinParams) -> Vec<PairRecord> {
    let mut em = Emitter {
        out: Vec::new(),
        seen_false: HashSet::new(),
    };
    let mut scratch = Vec::new();
    for i in 0..buf.len() {
        if !buf.probe_only[i] {
            plane_sweep_step(buf, probe, i, params, &mut scratch, &mut em);
        }
    }
    treat_last_tr_points(buf, probe, params, &mut em);
    let bps: Vec<usize> = buf.breaking_candidates().filter(|&i| buf.owned[i]).collect();
    for i in bps {
        em.out.push(PairRecord::breaking(buf.d[i].bare()));
    }
    em.out
}

/// Joins one partition or split with the linear-scan kernel.
pub fn join_partition(unit: &impl JoinUnit, params: &JoinParams, dup: DupMode) -> Result<Vec<PairRecord>> {
    let mut buf = JoinBuffer::new(unit, dup)?;
    Ok(sweep(&mut buf, &Scan, params))
}
