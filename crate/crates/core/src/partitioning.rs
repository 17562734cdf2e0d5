//! Temporal partitioning.
//!
//! Two schemes live here:
//!
//! * uniform partitioning, where the time range is cut into equal-duration
//!   base partitions and every base partition is widened by `eps_t` on both
//!   sides so it can be joined on its own;
//! * equi-depth repartitioning, where a sampled histogram over timestamps
//!   decides `M` bins of (roughly) equal population, each bin is written as a
//!   time-sorted file, and splits are assembled from a file plus the `eps_t`
//!   borders of its neighbours.
//!
//! Base ranges are half-open `[t_s, t_e)`, except that the last uniform
//! partition is closed at the dataset's maximum timestamp, so every point has
//! exactly one home.
//!
//! Besides the points of its expanded range, each partition carries a few
//! *context* points: for every trajectory present, the sample right before the
//! range and the sample right after it. The join kernel only uses them to
//! answer "what is the previous/next point of this trajectory", never as
//! references or sweep subjects.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Interval, JoinParams, TrajId, TrajectoryPoint};

/// Default reservoir floor used by [`Sampling::default`].
pub const DEFAULT_MIN_SAMPLE: usize = 10_000;

pub(crate) fn time_order(a: &TrajectoryPoint, b: &TrajectoryPoint) -> std::cmp::Ordering {
    a.t.total_cmp(&b.t).then_with(|| a.traj_id.cmp(&b.traj_id))
}

/// One expanded partition of the uniform scheme.
#[derive(Clone, Debug)]
pub struct TemporalPartition {
    pub index: usize,
    pub base: Interval,
    pub expanded: Interval,
    /// The last partition's base range is closed at the maximum timestamp.
    pub last: bool,
    /// Points of the expanded range sorted by time; `orig_flag` marks base members.
    pub points: Vec<TrajectoryPoint>,
    /// Probe-only neighbours just outside the expanded range.
    pub context: Vec<TrajectoryPoint>,
}

impl TemporalPartition {
    /// Whether `t` lies in the base range.
    pub fn owns(&self, t: f64) -> bool {
        self.base.t_start <= t && (t < self.base.t_end || (self.last && t == self.base.t_end))
    }
}

/// Per-trajectory time-ordered view of a dataset, used to find the samples
/// adjacent to a time window.
pub(crate) struct TrajectoryOrder {
    by_traj: HashMap<TrajId, Vec<TrajectoryPoint>>,
}

impl TrajectoryOrder {
    pub(crate) fn new<'a>(points: impl IntoIterator<Item = &'a TrajectoryPoint>) -> Self {
        let mut by_traj: HashMap<TrajId, Vec<TrajectoryPoint>> = HashMap::new();
        for p in points {
            by_traj.entry(p.traj_id.clone()).or_default().push(p.bare());
        }
        for v in by_traj.values_mut() {
            v.sort_by(|a, b| a.t.total_cmp(&b.t));
        }
        TrajectoryOrder { by_traj }
    }

    /// For every trajectory with a point inside `[lo, hi]`, its samples just
    /// before `lo` and just after `hi`.
    pub(crate) fn context(&self, window: &[TrajectoryPoint], lo: f64, hi: f64) -> Vec<TrajectoryPoint> {
        let mut seen: Vec<&TrajId> = window.iter().map(|p| &p.traj_id).collect();
        seen.sort();
        seen.dedup();
        let mut out = Vec::new();
        for id in seen {
            let Some(pts) = self.by_traj.get(id) else { continue };
            let first = pts.partition_point(|p| p.t < lo);
            let end = pts.partition_point(|p| p.t <= hi);
            if first > 0 {
                out.push(non_home(&pts[first - 1]));
            }
            if end < pts.len() {
                out.push(non_home(&pts[end]));
            }
        }
        out.sort_by(time_order);
        out
    }
}

fn non_home(p: &TrajectoryPoint) -> TrajectoryPoint {
    let mut p = p.clone();
    p.orig_flag = false;
    p
}

/// Splits `[T_min, T_max]` into `n_parts` equal base partitions, each widened
/// by `eps_t`, and routes every point to all expanded partitions it falls in.
pub fn uniform_temporal_partition(
    points: &[TrajectoryPoint],
    n_parts: usize,
    params: &JoinParams,
) -> Result<Vec<TemporalPartition>> {
    if n_parts == 0 {
        return Err(Error::InvalidArgument("n_parts must be at least 1".into()));
    }
    if points.is_empty() {
        return Ok(Vec::new());
    }
    let (t_min, t_max) = points
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| (lo.min(p.t), hi.max(p.t)));
    let borders = UniformBorders::new(t_min, t_max, n_parts);
    let eps = params.eps_t;

    let mut parts: Vec<TemporalPartition> = (0..n_parts)
        .map(|i| {
            let base = borders.base(i);
            TemporalPartition {
                index: i,
                base,
                expanded: Interval::new(base.t_start - eps, base.t_end + eps),
                last: i + 1 == n_parts,
                points: Vec::new(),
                context: Vec::new(),
            }
        })
        .collect();

    for p in points {
        let home = borders.home(p.t);
        for i in borders.expanded_range(p.t, eps) {
            let mut q = p.clone();
            q.orig_flag = i == home;
            q.cell_id = None;
            parts[i].points.push(q);
        }
    }

    let order = TrajectoryOrder::new(points);
    parts.par_iter_mut().for_each(|part| {
        part.points.sort_by(time_order);
        part.context = order.context(&part.points, part.expanded.t_start, part.expanded.t_end);
    });

    let max_gap = max_sampling_gap(&order);
    if n_parts > 1 && borders.width <= max_gap {
        log::warn!(
            "partition duration {} does not exceed the largest sampling gap {}",
            borders.width,
            max_gap
        );
    }
    Ok(parts)
}

fn max_sampling_gap(order: &TrajectoryOrder) -> f64 {
    order
        .by_traj
        .values()
        .flat_map(|v| v.windows(2).map(|w| w[1].t - w[0].t))
        .fold(0.0, f64::max)
}

/// Base-partition arithmetic of the uniform scheme.
#[derive(Clone, Copy, Debug)]
pub struct UniformBorders {
    pub t_min: f64,
    pub t_max: f64,
    pub n_parts: usize,
    pub width: f64,
}

impl UniformBorders {
    pub fn new(t_min: f64, t_max: f64, n_parts: usize) -> Self {
        UniformBorders {
            t_min,
            t_max,
            n_parts,
            width: (t_max - t_min) / n_parts as f64,
        }
    }

    fn border(&self, i: usize) -> f64 {
        if i >= self.n_parts {
            self.t_max
        } else {
            self.t_min + i as f64 * self.width
        }
    }

    pub fn base(&self, i: usize) -> Interval {
        Interval::new(self.border(i), self.border(i + 1))
    }

    /// Index of the base partition that owns `t`.
    pub fn home(&self, t: f64) -> usize {
        // largest i with border(i) <= t
        let mut lo = 0;
        let mut hi = self.n_parts;
        while hi - lo > 1 {
            let mid = (lo + hi) / 2;
            if self.border(mid) <= t {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        lo
    }

    /// Partitions whose expanded range `[b_i - eps, b_{i+1} + eps]` contains `t`.
    pub fn expanded_range(&self, t: f64, eps: f64) -> std::ops::Range<usize> {
        let home = self.home(t);
        let mut lo = home;
        while lo > 0 && t <= self.border(lo) + eps {
            lo -= 1;
        }
        if !(t <= self.border(lo + 1) + eps) {
            lo += 1;
        }
        let mut hi = home;
        while hi + 1 < self.n_parts && self.border(hi + 1) - eps <= t {
            hi += 1;
        }
        lo..hi + 1
    }
}

/// How the repartitioning step samples timestamps.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sampling {
    /// Fraction of the input to sample, in `(0, 1]`.
    pub rate: f64,
    /// Reservoir floor: the sample holds at least this many points (or all of them).
    pub min_size: usize,
    pub seed: u64,
}

impl Default for Sampling {
    fn default() -> Self {
        Sampling {
            rate: 0.01,
            min_size: DEFAULT_MIN_SAMPLE,
            seed: 0,
        }
    }
}

impl Sampling {
    pub fn with_rate(rate: f64) -> Self {
        Sampling {
            rate,
            ..Default::default()
        }
    }

    pub fn reservoir_size(&self, n: usize) -> usize {
        let by_rate = (self.rate * n as f64).ceil() as usize;
        by_rate.max(self.min_size).min(n)
    }
}

/// Uniform random sample of `n` values (all of them when `k >= n`).
pub(crate) fn reservoir_sample<T: Copy>(items: impl Iterator<Item = T>, k: usize, seed: u64) -> Vec<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(k);
    for (seen, item) in items.enumerate() {
        if out.len() < k {
            out.push(item);
        } else {
            let j = rng.random_range(0..=seen);
            if j < k {
                out[j] = item;
            }
        }
    }
    out
}

/// Histogram over the temporal dimension with bins of equal sampled population.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EquiDepthHistogram {
    /// `M + 1` non-decreasing boundaries; the first is `-inf`, the last `+inf`.
    pub boundaries: Vec<f64>,
    pub sample_size: usize,
}

impl EquiDepthHistogram {
    /// Rebuilds a histogram from its `M - 1` inner boundaries.
    pub fn from_inner(inner: &[f64], sample_size: usize) -> Self {
        let mut boundaries = Vec::with_capacity(inner.len() + 2);
        boundaries.push(f64::NEG_INFINITY);
        boundaries.extend_from_slice(inner);
        boundaries.push(f64::INFINITY);
        EquiDepthHistogram {
            boundaries,
            sample_size,
        }
    }

    pub fn bins(&self) -> usize {
        self.boundaries.len() - 1
    }

    pub fn inner(&self) -> &[f64] {
        &self.boundaries[1..self.boundaries.len() - 1]
    }

    /// Bin `i` such that `b_i <= t < b_{i+1}`.
    pub fn bin_of(&self, t: f64) -> usize {
        self.inner().partition_point(|&b| b <= t)
    }

    pub fn bin_range(&self, i: usize) -> Interval {
        Interval::new(self.boundaries[i], self.boundaries[i + 1])
    }
}

/// Samples the timestamps and places boundaries at the `i / M` quantiles
/// (midpoint between the two straddling sample values).
pub fn build_equidepth_histogram(
    points: &[TrajectoryPoint],
    sampling: &Sampling,
    m: usize,
) -> Result<EquiDepthHistogram> {
    if points.is_empty() {
        return Err(Error::InvalidArgument("cannot build a histogram over no points".into()));
    }
    if m == 0 {
        return Err(Error::InvalidArgument("histogram needs at least one bin".into()));
    }
    if !(sampling.rate > 0.0 && sampling.rate <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "sample rate must be in (0, 1], got {}",
            sampling.rate
        )));
    }
    let k = sampling.reservoir_size(points.len()).max(1);
    let mut sample = reservoir_sample(points.iter().map(|p| p.t), k, sampling.seed);
    sample.sort_by(f64::total_cmp);
    let s = sample.len();
    let inner: Vec<f64> = (1..m)
        .map(|i| {
            let idx = i * s / m;
            if idx == 0 {
                sample[0]
            } else if idx >= s {
                sample[s - 1]
            } else {
                0.5 * (sample[idx - 1] + sample[idx])
            }
        })
        .collect();
    Ok(EquiDepthHistogram::from_inner(&inner, s))
}

/// `M = ceil(total / block)`.
pub fn compute_m(total_size_bytes: u64, block_size_bytes: u64) -> Result<usize> {
    if total_size_bytes == 0 || block_size_bytes == 0 {
        return Err(Error::InvalidArgument("sizes must be positive".into()));
    }
    Ok(total_size_bytes.div_ceil(block_size_bytes) as usize)
}

/// Number of consecutive files grouped together for collocation, `ceil(M / N)`.
pub fn group_factor(m: usize, workers: usize) -> usize {
    m.div_ceil(workers.max(1)).max(1)
}

/// One time-sorted output file of the repartitioning step.
#[derive(Clone, Debug, PartialEq)]
pub struct PartitionFile {
    pub index: usize,
    /// `[b_i, b_{i+1})`; the outer bins extend to infinity.
    pub base: Interval,
    pub group_id: usize,
    pub points: Vec<TrajectoryPoint>,
}

/// Routes each point to its histogram bin and sorts every bin by time.
pub fn repartition(points: &[TrajectoryPoint], hist: &EquiDepthHistogram, k: usize) -> Vec<PartitionFile> {
    let m = hist.bins();
    let mut bins: Vec<Vec<TrajectoryPoint>> = vec![Vec::new(); m];
    for p in points {
        bins[hist.bin_of(p.t)].push(p.bare());
    }
    bins.par_iter_mut().for_each(|b| b.sort_by(time_order));
    bins.into_iter()
        .enumerate()
        .map(|(i, pts)| PartitionFile {
            index: i,
            base: hist.bin_range(i),
            group_id: i / k.max(1),
            points: pts,
        })
        .collect()
}

/// A bloated work unit for the single-job pipelines.
#[derive(Clone, Debug)]
pub struct Split {
    pub index: usize,
    pub group_id: usize,
    /// Base range `[t_s, t_e)` of the file the split was built from.
    pub base: Interval,
    /// All points in `[t_s - eps_t, t_e + eps_t]`, sorted by time.
    pub points: Vec<TrajectoryPoint>,
    /// Probe-only neighbours just outside that range.
    pub context: Vec<TrajectoryPoint>,
}

impl Split {
    pub fn bloated(&self, eps_t: f64) -> Interval {
        Interval::new(self.base.t_start - eps_t, self.base.t_end + eps_t)
    }

    /// Whether `t` lies in the base range.
    pub fn owns(&self, t: f64) -> bool {
        self.base.t_start <= t && t < self.base.t_end
    }
}

/// Builds one split per file by pulling the `eps_t` borders from neighbouring
/// files (as many files as needed when `eps_t` exceeds a neighbour's span).
pub fn build_splits(files: &[PartitionFile], params: &JoinParams) -> Vec<Split> {
    let all: Vec<&TrajectoryPoint> = files.iter().flat_map(|f| f.points.iter()).collect();
    let order = TrajectoryOrder::new(all.iter().copied());
    let eps = params.eps_t;
    files
        .par_iter()
        .enumerate()
        .map(|(i, file)| {
            let lo = file.base.t_start - eps;
            let hi = file.base.t_end + eps;
            let mut pts = Vec::new();
            // left neighbours, nearest first
            for f in files[..i].iter().rev() {
                let start = f.points.partition_point(|p| p.t < lo);
                pts.extend(f.points[start..].iter().cloned());
                if start > 0 {
                    break;
                }
            }
            pts.extend(file.points.iter().cloned());
            for f in &files[i + 1..] {
                let end = f.points.partition_point(|p| p.t <= hi);
                pts.extend(f.points[..end].iter().cloned());
                if end < f.points.len() {
                    break;
                }
            }
            pts.sort_by(time_order);
            for p in &mut pts {
                p.orig_flag = file.base.t_start <= p.t && p.t < file.base.t_end;
            }
            let context = order.context(&pts, lo, hi);
            Split {
                index: i,
                group_id: file.group_id,
                base: file.base,
                points: pts,
                context,
            }
        })
        .collect()
}
