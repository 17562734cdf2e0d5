//! Refinement of join records into maximal matching subtrajectory pairs.
//!
//! A refine task receives every record whose reference point belongs to one
//! trajectory `p`, sorted by the reference point's time. Consecutive records
//! with the same reference point form one entry of the match list: the
//! partners of that point, kept sorted by trajectory id. Breaking points give
//! empty entries.
//!
//! For a partner trajectory `x`, a run is a maximal stretch of consecutive
//! entries that all contain some point of `x`. Once the run has ended and the
//! stream is more than `2 * eps_t` past it, every point of `x` it can reach
//! is known, and every joining pair inside it seeds a search for the largest pair of contiguous
//! subtrajectories around it in which each point has a partner on the other
//! side: the run is shrunk to entries with a partner inside the current `x`
//! segment, the segment to points with a partner inside the current run, and
//! so on until nothing changes. Points of `x` that the join reported as
//! non-joining neighbours of `p` break the segment, which is how gaps that
//! never show up as partners are detected. A resulting pair is reported when
//! its common lifespan reaches `delta_t - 2 * eps_t`.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use crate::error::{Error, Result};
use crate::model::{JoinParams, MatchPair, PairRecord, Subtrajectory, TrajId};

/// Switches that drop information the refinement normally relies on.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct RefineOptions {
    /// Skip breaking-point entries, so runs continue across them.
    pub ignore_breaking_points: bool,
    /// Skip candidate non-joining records, so segments continue across gaps.
    pub ignore_false_list: bool,
}

#[derive(Clone, Copy, Debug, PartialEq)]
struct Tk(f64);

impl Eq for Tk {}

impl PartialOrd for Tk {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Tk {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.0.total_cmp(&other.0)
    }
}

/// One reference point and its partners, sorted by (trajectory, time).
#[derive(Clone, Debug, Default)]
pub struct MatchEntry {
    pub t: f64,
    partners: Vec<(u32, f64)>,
}

impl MatchEntry {
    fn has_partner_in(&self, x: u32, lo: f64, hi: f64) -> bool {
        let start = self.partners.partition_point(|&(id, t)| (id, Tk(t)) < (x, Tk(lo)));
        self.partners.get(start).is_some_and(|&(id, t)| id == x && t <= hi)
    }

    fn partners_of(&self, x: u32) -> &[(u32, f64)] {
        let a = self.partners.partition_point(|&(id, _)| id < x);
        let b = self.partners.partition_point(|&(id, _)| id <= x);
        &self.partners[a..b]
    }
}

/// Entries of the reference trajectory in time order.
#[derive(Clone, Debug, Default)]
pub struct MatchList {
    pub entries: Vec<MatchEntry>,
}

/// What is known about one point of a partner trajectory.
#[derive(Clone, Debug, Default)]
struct KnownPoint {
    /// Entries (reference points) this point joins, ascending.
    refs: Vec<usize>,
}

impl KnownPoint {
    fn partnered(&self) -> bool {
        !self.refs.is_empty()
    }

    fn joins_within(&self, lo: usize, hi: usize) -> bool {
        let i = self.refs.partition_point(|&e| e < lo);
        self.refs.get(i).is_some_and(|&e| e <= hi)
    }
}

/// Points of partner trajectories seen so far. A point with no joining
/// reference is one reported only as a non-joining neighbour.
#[derive(Clone, Debug, Default)]
pub struct FalseList {
    by_partner: HashMap<u32, BTreeMap<Tk, KnownPoint>>,
}

impl FalseList {
    fn add_joining(&mut self, x: u32, t: f64, entry: usize) {
        let refs = &mut self.by_partner.entry(x).or_default().entry(Tk(t)).or_default().refs;
        if refs.last() != Some(&entry) {
            refs.push(entry);
        }
    }

    fn add_false(&mut self, x: u32, t: f64) {
        self.by_partner.entry(x).or_default().entry(Tk(t)).or_default();
    }

    /// Number of partner points currently known only as non-joining.
    pub fn len(&self) -> usize {
        self.by_partner
            .values()
            .flat_map(|m| m.values())
            .filter(|k| !k.partnered())
            .count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Entries `[first, last]` of one run of a partner trajectory.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PartnerRun {
    pub partner: u32,
    pub first: usize,
    pub last: usize,
}

/// A pair found by the shrinking search, before the lifespan test.
#[derive(Clone, Copy, Debug, PartialEq)]
struct Covering {
    first: usize,
    last: usize,
    x_start: f64,
    x_end: f64,
}

/// Streaming state of one refine task.
#[derive(Debug)]
pub struct RefineResult {
    traj: TrajId,
    params: JoinParams,
    opts: RefineOptions,
    list: MatchList,
    falses: FalseList,
    ids: HashMap<TrajId, u32>,
    names: Vec<TrajId>,
    open: BTreeMap<u32, usize>,
    /// Closed runs waiting until every partner point they may reach is known.
    pending: Vec<PartnerRun>,
    /// Maximal pairs found so far (reference side first).
    pub result_final: BTreeSet<MatchPair>,
}

impl RefineResult {
    pub fn new(traj: TrajId, params: JoinParams, opts: RefineOptions) -> Self {
        RefineResult {
            traj,
            params,
            opts,
            list: MatchList::default(),
            falses: FalseList::default(),
            ids: HashMap::new(),
            names: Vec::new(),
            open: BTreeMap::new(),
            pending: Vec::new(),
            result_final: BTreeSet::new(),
        }
    }

    fn intern(&mut self, id: &TrajId) -> u32 {
        if let Some(&i) = self.ids.get(id) {
            return i;
        }
        let i = self.names.len() as u32;
        self.ids.insert(id.clone(), i);
        self.names.push(id.clone());
        i
    }

    /// Feeds all records of one reference point.
    fn push_entry(&mut self, t: f64, recs: &[&PairRecord]) {
        // A partner point within eps_t of a run joins reference points at
        // most 2 eps_t past the run's end; once those are in, the run is final.
        let horizon = 2.0 * self.params.eps_t;
        let (ready, waiting): (Vec<_>, Vec<_>) = std::mem::take(&mut self.pending)
            .into_iter()
            .partition(|r| self.list.entries[r.last].t + horizon < t);
        self.pending = waiting;
        for run in ready {
            self.flush(run);
        }
        let is_bp = recs.iter().all(|r| r.other_point.is_none());
        if is_bp && self.opts.ignore_breaking_points {
            return;
        }
        let e = self.list.entries.len();
        let mut partners = Vec::new();
        for r in recs {
            let Some(o) = &r.other_point else { continue };
            let x = self.intern(&o.traj_id);
            if r.flag {
                partners.push((x, o.t));
                self.falses.add_joining(x, o.t, e);
            } else if !self.opts.ignore_false_list {
                self.falses.add_false(x, o.t);
            }
        }
        partners.sort_by_key(|a| (a.0, Tk(a.1)));
        partners.dedup();
        let present: BTreeSet<u32> = partners.iter().map(|p| p.0).collect();
        self.list.entries.push(MatchEntry { t, partners });

        let closed: Vec<(u32, usize)> = self
            .open
            .iter()
            .filter(|(x, _)| !present.contains(x))
            .map(|(&x, &first)| (x, first))
            .collect();
        for (x, first) in closed {
            self.open.remove(&x);
            self.pending.push(PartnerRun {
                partner: x,
                first,
                last: e - 1,
            });
        }
        for x in present {
            self.open.entry(x).or_insert(e);
        }
    }

    fn flush(&mut self, run: PartnerRun) {
        let entries = &self.list.entries;
        if entries[run.last].t - entries[run.first].t < self.params.min_lifespan() {
            return;
        }
        for c in window_sweep(&self.list, &self.falses, run, &self.params) {
            let x = &self.names[run.partner as usize];
            let pair = MatchPair::new(
                Subtrajectory::new(self.traj.clone(), entries[c.first].t, entries[c.last].t),
                Subtrajectory::new(x.clone(), c.x_start, c.x_end),
            );
            if pair.lifespan().duration() >= self.params.min_lifespan() {
                self.result_final.insert(pair);
            }
        }
    }

    /// Closes every open run.
    pub fn finish(mut self) -> BTreeSet<MatchPair> {
        let last = self.list.entries.len();
        for run in std::mem::take(&mut self.pending) {
            self.flush(run);
        }
        let open = std::mem::take(&mut self.open);
        for (x, first) in open {
            self.flush(PartnerRun {
                partner: x,
                first,
                last: last - 1,
            });
        }
        self.result_final
    }
}

/// Every maximal covering pair seeded by a joining pair inside `run`.
fn window_sweep(list: &MatchList, falses: &FalseList, run: PartnerRun, params: &JoinParams) -> Vec<Covering> {
    let x = run.partner;
    let Some(known) = falses.by_partner.get(&x) else {
        return Vec::new();
    };
    let mut found: Vec<Covering> = Vec::new();
    for e in run.first..=run.last {
        for &(_, xt) in list.entries[e].partners_of(x) {
            let inside = found
                .iter()
                .any(|c| c.first <= e && e <= c.last && c.x_start <= xt && xt <= c.x_end);
            if !inside {
                found.push(shrink(list, known, run, e, xt, params));
            }
        }
    }
    found
}

/// Greatest pair of contiguous stretches around the joining pair `(e, xt)`
/// in which every point has a partner on the other side.
fn shrink(
    list: &MatchList,
    known: &BTreeMap<Tk, KnownPoint>,
    run: PartnerRun,
    e: usize,
    xt: f64,
    params: &JoinParams,
) -> Covering {
    let x = run.partner;
    let entries = &list.entries;
    let (mut first, mut last) = (run.first, run.last);
    // points outside the run's reach cannot have partners in it
    let reach_lo = entries[first].t - params.eps_t;
    let reach_hi = entries[last].t + params.eps_t;
    let seg = |lo_t: f64, hi_t: f64, first: usize, last: usize| {
        let ok = |k: &KnownPoint| k.joins_within(first, last);
        let mut start = xt;
        for (t, k) in known.range(Tk(lo_t)..Tk(xt)).rev() {
            if !ok(k) {
                break;
            }
            start = t.0;
        }
        let mut end = xt;
        for (t, k) in known.range((std::ops::Bound::Excluded(Tk(xt)), std::ops::Bound::Included(Tk(hi_t)))) {
            if !ok(k) {
                break;
            }
            end = t.0;
        }
        (start, end)
    };
    let (mut xs, mut xe) = seg(reach_lo, reach_hi, first, last);
    loop {
        let mut f = e;
        while f > first && entries[f - 1].has_partner_in(x, xs, xe) {
            f -= 1;
        }
        let mut l = e;
        while l < last && entries[l + 1].has_partner_in(x, xs, xe) {
            l += 1;
        }
        let (s, t) = seg(xs, xe, f, l);
        if (f, l, s, t) == (first, last, xs, xe) {
            break;
        }
        (first, last, xs, xe) = (f, l, s, t);
    }
    Covering {
        first,
        last,
        x_start: xs,
        x_end: xe,
    }
}

/// Maximal matching pairs with reference side in the stream's trajectory.
///
/// `records` must all reference the same trajectory and be sorted by the
/// reference point's time.
pub fn refine_trajectory(records: &[PairRecord], params: &JoinParams) -> Result<BTreeSet<MatchPair>> {
    refine_trajectory_with(records, params, RefineOptions::default())
}

pub fn refine_trajectory_with(
    records: &[PairRecord],
    params: &JoinParams,
    opts: RefineOptions,
) -> Result<BTreeSet<MatchPair>> {
    let Some(first) = records.first() else {
        return Ok(BTreeSet::new());
    };
    let traj = first.ref_point.traj_id.clone();
    let mut state = RefineResult::new(traj.clone(), *params, opts);
    let mut i = 0;
    while i < records.len() {
        let t = records[i].ref_point.t;
        let mut j = i;
        let mut group = Vec::new();
        while j < records.len() && records[j].ref_point.t == t {
            if records[j].ref_point.traj_id != traj {
                return Err(Error::InvalidArgument(format!(
                    "refine stream for `{traj}` contains a record of `{}`",
                    records[j].ref_point.traj_id
                )));
            }
            group.push(&records[j]);
            j += 1;
        }
        if j < records.len() && !(records[j].ref_point.t > t) {
            return Err(Error::UnsortedStream {
                traj: traj.clone(),
                position: j,
            });
        }
        state.push_entry(t, &group);
        i = j;
    }
    Ok(state.finish())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::join::{join_partition, DupMode};
    use crate::model::{fixtures, Trajectory, TrajectoryPoint};
    use crate::oracle::oracle_join;
    use crate::partitioning::uniform_temporal_partition;

    /// Records of a whole-dataset join, grouped and sorted per reference trajectory.
    fn grouped(trajs: &[Trajectory], params: &JoinParams) -> BTreeMap<TrajId, Vec<PairRecord>> {
        let pts = fixtures::flatten(trajs);
        let part = uniform_temporal_partition(&pts, 1, params).unwrap().remove(0);
        let mut g: BTreeMap<TrajId, Vec<PairRecord>> = BTreeMap::new();
        for r in join_partition(&part, params, DupMode::Flag).unwrap() {
            g.entry(r.ref_point.traj_id.clone()).or_default().push(r);
        }
        for v in g.values_mut() {
            v.sort_by(|a, b| a.ref_point.t.total_cmp(&b.ref_point.t));
        }
        g
    }

    fn refine_all(trajs: &[Trajectory], params: &JoinParams, opts: RefineOptions) -> BTreeSet<MatchPair> {
        grouped(trajs, params)
            .values()
            .flat_map(|v| refine_trajectory_with(v, params, opts).unwrap())
            .map(MatchPair::canonical)
            .collect()
    }

    #[test]
    fn t1_reference_r() {
        let (t1, params) = fixtures::t1();
        let g = grouped(&t1, &params);
        let got = refine_trajectory(&g[&TrajId::new("r")], &params).unwrap();
        let want = BTreeSet::from([MatchPair::new(
            Subtrajectory::from_indices(&t1[0], 0, 4),
            Subtrajectory::from_indices(&t1[1], 0, 4),
        )]);
        assert_eq!(got, want);
        assert_eq!(refine_all(&t1, &params, RefineOptions::default()), oracle_join(&t1, &params).unwrap());
    }

    #[test]
    fn t2_two_matches() {
        let (t2, params) = fixtures::t2();
        let got = refine_all(&t2, &params, RefineOptions::default());
        assert_eq!(got, oracle_join(&t2, &params).unwrap());
        assert_eq!(got.len(), 2);
    }

    #[test]
    fn only_breaking_points() {
        let params = JoinParams::new(1.0, 1.0, 0.0).unwrap();
        let recs: Vec<_> = (0..3)
            .map(|i| PairRecord::breaking(TrajectoryPoint::new("a", i as f64, 0.0, 0.0)))
            .collect();
        assert!(refine_trajectory(&recs, &params).unwrap().is_empty());
        assert!(refine_trajectory(&[], &params).unwrap().is_empty());
    }

    #[test]
    fn unsorted_stream_fails() {
        let params = JoinParams::new(1.0, 1.0, 0.0).unwrap();
        let recs = vec![
            PairRecord::breaking(TrajectoryPoint::new("a", 2.0, 0.0, 0.0)),
            PairRecord::breaking(TrajectoryPoint::new("a", 1.0, 0.0, 0.0)),
        ];
        assert!(matches!(
            refine_trajectory(&recs, &params).unwrap_err(),
            Error::UnsortedStream { position: 1, .. }
        ));
        let mixed = vec![
            PairRecord::breaking(TrajectoryPoint::new("a", 1.0, 0.0, 0.0)),
            PairRecord::breaking(TrajectoryPoint::new("b", 1.0, 0.0, 0.0)),
        ];
        assert!(refine_trajectory(&mixed, &params).is_err());
    }

    /// `q` follows `r` at `p_1..p_6` except that `q_6` is displaced while its
    /// neighbours keep matching; with `eps_t` wide enough, `q_5` and `q_7`
    /// still cover the reference points around it.
    fn false_list_scenario() -> (Vec<Trajectory>, JoinParams) {
        let r = Trajectory::from_samples("r", &(1..=8).map(|i| (i as f64, i as f64, 0.0)).collect::<Vec<_>>()).unwrap();
        let q = Trajectory::from_samples(
            "q",
            &(1..=8)
                .map(|i| (i as f64, i as f64, if i == 6 { 30.0 } else { 0.5 }))
                .collect::<Vec<_>>(),
        )
        .unwrap();
        (vec![r, q], JoinParams::new(1.5, 1.0, 4.0).unwrap())
    }

    #[test]
    fn false_list_breaks_the_segment() {
        let (trajs, params) = false_list_scenario();
        let g = grouped(&trajs, &params);
        let r = &g[&TrajId::new("r")];
        assert!(r.iter().any(|rec| !rec.flag && rec.other_point.as_ref().unwrap().t == 6.0));
        let got = refine_trajectory(r, &params).unwrap();
        let first = MatchPair::new(Subtrajectory::new("r", 1.0, 6.0), Subtrajectory::new("q", 1.0, 5.0));
        assert!(got.contains(&first), "{got:?}");
        assert_eq!(refine_all(&trajs, &params, RefineOptions::default()), oracle_join(&trajs, &params).unwrap());

        // without the false list q_6 goes unnoticed and one oversized pair appears
        let ablated = refine_all(
            &trajs,
            &params,
            RefineOptions {
                ignore_false_list: true,
                ..Default::default()
            },
        );
        assert_ne!(ablated, oracle_join(&trajs, &params).unwrap());
    }

    #[test]
    fn ignoring_breaking_points_bridges_runs() {
        let (t2, mut params) = fixtures::t2();
        params.delta_t = 5.0;
        assert!(refine_all(&t2, &params, RefineOptions::default()).is_empty());
        let ablated = refine_all(
            &t2,
            &params,
            RefineOptions {
                ignore_breaking_points: true,
                ignore_false_list: true,
            },
        );
        assert!(!ablated.is_empty());
    }

    #[test]
    fn degenerate_window() {
        // 2 eps_t >= delta_t: single-point pairs qualify
        let a = Trajectory::from_samples("a", &[(0.0, 0.0, 0.0), (5.0, 9.0, 9.0)]).unwrap();
        let b = Trajectory::from_samples("b", &[(0.0, 0.1, 0.0), (5.0, -9.0, -9.0)]).unwrap();
        let params = JoinParams::new(0.5, 1.0, 1.0).unwrap();
        let got = refine_all(&[a.clone(), b.clone()], &params, RefineOptions::default());
        assert_eq!(got, oracle_join(&[a, b], &params).unwrap());
        assert_eq!(got.len(), 1);
    }

    #[test]
    fn symmetric_consistency() {
        let (t2, params) = fixtures::t2();
        let g = grouped(&t2, &params);
        let from_r: BTreeSet<_> = refine_trajectory(&g[&TrajId::new("r")], &params)
            .unwrap()
            .into_iter()
            .map(MatchPair::canonical)
            .collect();
        let from_s: BTreeSet<_> = refine_trajectory(&g[&TrajId::new("s")], &params)
            .unwrap()
            .into_iter()
            .map(MatchPair::canonical)
            .collect();
        assert_eq!(from_r, from_s);
    }

    /// A partner point between two partners of a run joins the reference
    /// trajectory only after the run ends; closing the run early skipped it.
    #[test]
    fn late_partner_point_breaks_the_segment() {
        let r = Trajectory::from_samples("r", &[(36.0, 3.322, 1.112), (39.0, 4.011, 1.309), (40.0, 3.410, 0.771)]).unwrap();
        let s = Trajectory::from_samples("s", &[(38.0, 2.877, -0.703), (39.0, 4.833, -1.650), (41.0, 3.890, -0.545)]).unwrap();
        let params = JoinParams::new(2.25, 2.5, 0.0).unwrap();
        let trajs = [r, s];
        let got = refine_all(&trajs, &params, RefineOptions::default());
        assert!(!got.contains(&MatchPair::new(Subtrajectory::new("r", 36.0, 40.0), Subtrajectory::new("s", 38.0, 38.0))));
        assert_eq!(got, oracle_join(&trajs, &params).unwrap());
    }

    #[test]
    fn random_instances_match_oracle() {
        for seed in 0..200 {
            let (trajs, params) = crate::generate::random_instance(seed, 8, 25);
            let want = oracle_join(&trajs, &params).unwrap();
            let pts = fixtures::flatten(&trajs);
            for n_parts in [1, 2, 3, 5] {
                let mut g: BTreeMap<TrajId, Vec<PairRecord>> = BTreeMap::new();
                for part in uniform_temporal_partition(&pts, n_parts, &params).unwrap() {
                    for r in join_partition(&part, &params, DupMode::Flag).unwrap() {
                        g.entry(r.ref_point.traj_id.clone()).or_default().push(r);
                    }
                }
                let got: BTreeSet<_> = g
                    .values_mut()
                    .flat_map(|v| {
                        v.sort_by(|a, b| a.ref_point.t.total_cmp(&b.ref_point.t));
                        refine_trajectory(v, &params).unwrap()
                    })
                    .map(MatchPair::canonical)
                    .collect();
                assert_eq!(got, want, "seed {seed}, {n_parts} parts, {params:?}");
            }
        }
    }
}
