//! Map/shuffle/reduce execution of the three join pipelines on a local
//! worker pool.
//!
//! * `Dtjb`: job 1 partitions the data uniformly in time and joins every
//!   partition; its records are spilled (to the workdir when one is set) and
//!   job 2 reads them back, shuffles them per reference trajectory and refines.
//! * `Dtjr`: joins the bloated splits of a repartitioned dataset, then
//!   shuffles and refines, in one pass.
//! * `Dtji`: like `Dtjr` with the indexed join kernel.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::index::{build_quadtree, join_partition_indexed_with_stats, threshold_from_fraction, QuadTree};
use crate::io::{self, DatasetManifest};
use crate::join::{join_partition, DupMode};
use crate::model::{JoinParams, MatchPair, PairRecord, TrajId, TrajectoryPoint};
use crate::partitioning::{
    build_equidepth_histogram, build_splits, group_factor, repartition, reservoir_sample,
    uniform_temporal_partition, EquiDepthHistogram, PartitionFile, Sampling,
};
use crate::refine::{refine_trajectory_with, RefineOptions};

/// Default quadtree leaf threshold as a fraction of the sample.
pub const DEFAULT_QUADTREE_FRACTION: f64 = 0.03;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    Dtjb,
    Dtjr,
    Dtji,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Dtjb, Variant::Dtjr, Variant::Dtji];
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::Dtjb => "dtjb",
            Variant::Dtjr => "dtjr",
            Variant::Dtji => "dtji",
        })
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "dtjb" => Ok(Variant::Dtjb),
            "dtjr" => Ok(Variant::Dtjr),
            "dtji" => Ok(Variant::Dtji),
            _ => Err(Error::InvalidArgument(format!("unknown algorithm `{s}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PipelineConfig {
    pub variant: Variant,
    pub workers: usize,
    /// Number of uniform partitions (`Dtjb` only).
    pub n_parts: usize,
    pub params: JoinParams,
    pub seed: u64,
    /// Where `Dtjb` spills its intermediate records; in memory when unset.
    pub workdir: Option<PathBuf>,
    pub refine: RefineOptions,
}

impl PipelineConfig {
    pub fn new(variant: Variant, params: JoinParams) -> Self {
        PipelineConfig {
            variant,
            workers: 1,
            n_parts: 1,
            params,
            seed: 0,
            workdir: None,
            refine: RefineOptions::default(),
        }
    }

    pub fn workers(mut self, n: usize) -> Self {
        self.workers = n;
        self
    }

    pub fn n_parts(mut self, n: usize) -> Self {
        self.n_parts = n;
        self
    }
}

/// Preprocessing settings for the repartitioned pipelines.
#[derive(Clone, Debug, PartialEq)]
pub struct PrepareOptions {
    /// Number of files `M`.
    pub m: usize,
    pub sampling: Sampling,
    /// Cluster size used for grouping files (`k = ceil(M / workers)`).
    pub workers: usize,
    /// Quadtree leaf threshold as a fraction of the sample; no tree when unset.
    pub quadtree_fraction: Option<f64>,
}

impl Default for PrepareOptions {
    fn default() -> Self {
        PrepareOptions {
            m: 8,
            sampling: Sampling::default(),
            workers: 1,
            quadtree_fraction: Some(DEFAULT_QUADTREE_FRACTION),
        }
    }
}

/// A repartitioned dataset, in memory.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub hist: EquiDepthHistogram,
    pub files: Vec<PartitionFile>,
    pub k: usize,
    pub seed: u64,
    pub sample_rate: f64,
    pub tree: Option<QuadTree>,
}

/// Samples the data once, repartitions it into `M` time-sorted files and
/// optionally builds the shared quadtree.
pub fn prepare(points: &[TrajectoryPoint], opts: &PrepareOptions) -> Result<Prepared> {
    let k = group_factor(opts.m, opts.workers);
    if points.is_empty() {
        let hist = EquiDepthHistogram::from_inner(&[], 0);
        return Ok(Prepared {
            files: repartition(points, &hist, k),
            hist,
            k,
            seed: opts.sampling.seed,
            sample_rate: opts.sampling.rate,
            tree: None,
        });
    }
    let hist = build_equidepth_histogram(points, &opts.sampling, opts.m)?;
    let files = repartition(points, &hist, k);
    let tree = match opts.quadtree_fraction {
        Some(frac) => {
            let size = opts.sampling.reservoir_size(points.len()).max(1);
            let sample = reservoir_sample(points.iter().map(|p| (p.x, p.y)), size, opts.sampling.seed.wrapping_add(1));
            Some(build_quadtree(&sample, threshold_from_fraction(frac, sample.len()))?)
        }
        None => None,
    };
    Ok(Prepared {
        hist,
        files,
        k,
        seed: opts.sampling.seed,
        sample_rate: opts.sampling.rate,
        tree,
    })
}

impl Prepared {
    pub fn store(&self, workdir: &Path) -> Result<DatasetManifest> {
        io::write_workdir(workdir, &self.files, &self.hist, self.k, self.seed, self.sample_rate, self.tree.clone())
    }

    pub fn load(workdir: &Path) -> Result<Self> {
        let manifest = DatasetManifest::load(workdir)?;
        let files = io::read_workdir_files(workdir, &manifest)?;
        Ok(Prepared {
            hist: manifest.histogram(),
            files,
            k: manifest.k,
            seed: manifest.seed,
            sample_rate: manifest.sample_rate,
            tree: manifest.quadtree,
        })
    }
}

/// Counters and timings of one run.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunMetrics {
    pub variant: Option<Variant>,
    pub workers: usize,
    /// Points loaded by each join task.
    pub task_inputs: Vec<usize>,
    pub task_input_std: f64,
    pub joining_records: usize,
    pub breaking_records: usize,
    pub candidate_records: usize,
    /// Records emitted more than once across all tasks.
    pub duplicate_records: usize,
    pub shuffled_bytes: u64,
    pub refine_groups: usize,
    /// Pairs reported by refine tasks, before merging both orientations.
    pub match_reports: usize,
    /// Identical ordered pairs reported more than once.
    pub duplicate_matches: usize,
    pub matches: usize,
    pub partition_time: Duration,
    pub join_time: Duration,
    pub spill_time: Duration,
    pub shuffle_time: Duration,
    pub refine_time: Duration,
    pub total_time: Duration,
    /// Sum of per-task join times.
    pub join_task_time: Duration,
    /// Sum of per-task index build times (`Dtji`).
    pub index_build_time: Duration,
    pub index_entries: usize,
    pub indexed_points: usize,
}

/// Population standard deviation.
pub fn std_dev(values: &[usize]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<usize>() as f64 / n;
    (values.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n).sqrt()
}

impl RunMetrics {
    pub fn records(&self) -> usize {
        self.joining_records + self.breaking_records + self.candidate_records
    }

    /// Index entries (4-byte positions) relative to the buffered points
    /// (32-byte records).
    pub fn index_overhead(&self) -> f64 {
        if self.indexed_points == 0 {
            return 0.0;
        }
        (self.index_entries * 4) as f64 / (self.indexed_points * io::POINT_RECORD_BYTES) as f64
    }

    /// `key=value` lines.
    pub fn to_kv(&self) -> String {
        let secs = |d: Duration| format!("{:.6}", d.as_secs_f64());
        let mut lines = vec![
            ("variant", self.variant.map_or_else(String::new, |v| v.to_string())),
            ("workers", self.workers.to_string()),
            ("tasks", self.task_inputs.len().to_string()),
            ("task_input_total", self.task_inputs.iter().sum::<usize>().to_string()),
            ("task_input_std", format!("{:.6}", self.task_input_std)),
            ("joining_records", self.joining_records.to_string()),
            ("breaking_records", self.breaking_records.to_string()),
            ("candidate_records", self.candidate_records.to_string()),
            ("duplicate_records", self.duplicate_records.to_string()),
            ("shuffled_bytes", self.shuffled_bytes.to_string()),
            ("refine_groups", self.refine_groups.to_string()),
            ("match_reports", self.match_reports.to_string()),
            ("duplicate_matches", self.duplicate_matches.to_string()),
            ("matches", self.matches.to_string()),
            ("partition_seconds", secs(self.partition_time)),
            ("join_seconds", secs(self.join_time)),
            ("spill_seconds", secs(self.spill_time)),
            ("shuffle_seconds", secs(self.shuffle_time)),
            ("refine_seconds", secs(self.refine_time)),
            ("total_seconds", secs(self.total_time)),
            ("join_task_seconds", secs(self.join_task_time)),
            ("index_build_seconds", secs(self.index_build_time)),
            ("index_entries", self.index_entries.to_string()),
            ("indexed_points", self.indexed_points.to_string()),
        ];
        lines.push(("index_overhead", format!("{:.6}", self.index_overhead())));
        lines.into_iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_kv())?;
        Ok(())
    }

    /// Per-task input sizes as CSV.
    pub fn write_task_csv(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        writeln!(w, "task,points")?;
        for (i, n) in self.task_inputs.iter().enumerate() {
            writeln!(w, "{i},{n}")?;
        }
        w.flush()?;
        Ok(())
    }
}

fn panic_message(p: Box<dyn std::any::Any + Send>) -> String {
    p.downcast_ref::<&str>()
        .map(|s| s.to_string())
        .or_else(|| p.downcast_ref::<String>().cloned())
        .unwrap_or_else(|| "panic".into())
}

/// Runs `f` over `items` on the pool; a failing or panicking task fails the
/// whole phase with its id.
fn run_tasks<T: Sync, R: Send>(
    pool: &rayon::ThreadPool,
    phase: &str,
    items: &[T],
    f: impl Fn(&T) -> Result<R> + Sync,
) -> Result<Vec<R>> {
    pool.install(|| {
        items
            .par_iter()
            .enumerate()
            .map(|(i, item)| {
                let task = format!("{phase}-{i}");
                match catch_unwind(AssertUnwindSafe(|| f(item))) {
                    Ok(Ok(r)) => Ok(r),
                    Ok(Err(e)) => Err(Error::TaskFailed { task, msg: e.to_string() }),
                    Err(p) => Err(Error::TaskFailed {
                        task,
                        msg: panic_message(p),
                    }),
                }
            })
            .collect()
    })
}

/// Per-trajectory record streams, sorted by reference time, then partner
/// trajectory id.
pub type Groups = Vec<(TrajId, Vec<PairRecord>)>;

fn record_order(a: &PairRecord, b: &PairRecord) -> std::cmp::Ordering {
    let other = |r: &PairRecord| r.other_point.as_ref().map(|o| (o.traj_id.clone(), o.t));
    a.ref_point
        .t
        .total_cmp(&b.ref_point.t)
        .then_with(|| match (other(a), other(b)) {
            (Some((ia, ta)), Some((ib, tb))) => ia.cmp(&ib).then(ta.total_cmp(&tb)),
            (x, y) => x.is_some().cmp(&y.is_some()),
        })
        .then(a.flag.cmp(&b.flag))
}

/// Groups records by reference trajectory and sorts each group. Returns the
/// groups (in trajectory id order), the shuffled byte volume and the number
/// of records seen more than once.
pub fn shuffle_group(streams: Vec<Vec<PairRecord>>) -> (Groups, u64, usize) {
    let mut bytes = 0u64;
    let mut by: HashMap<TrajId, Vec<PairRecord>> = HashMap::new();
    for r in streams.into_iter().flatten() {
        bytes += io::encoded_len(&r) as u64;
        by.entry(r.ref_point.traj_id.clone()).or_default().push(r);
    }
    let mut groups: Groups = by.into_iter().collect();
    groups.sort_by(|a, b| a.0.cmp(&b.0));
    let dups: usize = groups
        .par_iter_mut()
        .map(|(_, v)| {
            v.sort_by(record_order);
            v.windows(2).filter(|w| w[0].key() == w[1].key()).count()
        })
        .sum();
    (groups, bytes, dups)
}

struct JoinOutput {
    records: Vec<PairRecord>,
    elapsed: Duration,
    index_time: Duration,
    index_entries: usize,
    indexed_points: usize,
}

fn count_kinds(m: &mut RunMetrics, streams: &[Vec<PairRecord>]) {
    use crate::model::RecordKind::*;
    for r in streams.iter().flatten() {
        match r.kind() {
            Joining => m.joining_records += 1,
            Breaking => m.breaking_records += 1,
            CandidateNonJoining => m.candidate_records += 1,
        }
    }
}

/// Runs one pipeline end to end. `points` feeds `Dtjb`; the repartitioned
/// variants read `prepared`.
pub fn run_pipeline(
    points: &[TrajectoryPoint],
    prepared: Option<&Prepared>,
    cfg: &PipelineConfig,
) -> Result<(BTreeSet<MatchPair>, RunMetrics)> {
    if cfg.workers == 0 {
        return Err(Error::InvalidArgument("workers must be at least 1".into()));
    }
    let started = Instant::now();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let params = cfg.params;
    let mut m = RunMetrics {
        variant: Some(cfg.variant),
        workers: cfg.workers,
        ..Default::default()
    };

    let streams: Vec<Vec<PairRecord>> = match cfg.variant {
        Variant::Dtjb => {
            let t = Instant::now();
            let parts = pool.install(|| uniform_temporal_partition(points, cfg.n_parts, &params))?;
            m.partition_time = t.elapsed();
            m.task_inputs = parts.iter().map(|p| p.points.len()).collect();

            let t = Instant::now();
            let outs = run_tasks(&pool, "join", &parts, |p| {
                let s = Instant::now();
                let records = join_partition(p, &params, DupMode::Flag)?;
                Ok(JoinOutput {
                    records,
                    elapsed: s.elapsed(),
                    index_time: Duration::ZERO,
                    index_entries: 0,
                    indexed_points: 0,
                })
            })?;
            m.join_time = t.elapsed();
            m.join_task_time = outs.iter().map(|o| o.elapsed).sum();
            let streams: Vec<_> = outs.into_iter().map(|o| o.records).collect();

            let t = Instant::now();
            let streams = match &cfg.workdir {
                Some(dir) => spill_and_reload(&pool, dir, points, streams)?,
                None => streams,
            };
            m.spill_time = t.elapsed();
            streams
        }
        Variant::Dtjr | Variant::Dtji => {
            let prep = prepared.ok_or_else(|| {
                Error::MissingPreprocessing(format!("{} needs a repartitioned dataset; run `repartition` first", cfg.variant))
            })?;
            let total: usize = prep.files.iter().map(|f| f.points.len()).sum();
            let tree = match (cfg.variant, &prep.tree) {
                (Variant::Dtji, None) if total > 0 => {
                    return Err(Error::MissingPreprocessing(
                        "dtji needs a quadtree in the manifest; repartition with a quadtree threshold".into(),
                    ))
                }
                (_, t) => t.as_ref(),
            };
            let t = Instant::now();
            let splits = pool.install(|| build_splits(&prep.files, &params));
            m.partition_time = t.elapsed();
            m.task_inputs = splits.iter().map(|s| s.points.len()).collect();

            let t = Instant::now();
            let variant = cfg.variant;
            let outs = run_tasks(&pool, "join", &splits, |s| {
                let start = Instant::now();
                let (records, stats) = match (variant, tree) {
                    (Variant::Dtji, Some(tree)) => {
                        let (r, st) = join_partition_indexed_with_stats(s, tree, &params)?;
                        (r, Some(st))
                    }
                    _ => (join_partition(s, &params, DupMode::BaseRange)?, None),
                };
                Ok(JoinOutput {
                    records,
                    elapsed: start.elapsed(),
                    index_time: stats.map_or(Duration::ZERO, |s| s.build_time),
                    index_entries: stats.map_or(0, |s| s.spi_entries + s.tri_entries),
                    indexed_points: stats.map_or(0, |s| s.buffer_len),
                })
            })?;
            m.join_time = t.elapsed();
            m.join_task_time = outs.iter().map(|o| o.elapsed).sum();
            m.index_build_time = outs.iter().map(|o| o.index_time).sum();
            m.index_entries = outs.iter().map(|o| o.index_entries).sum();
            m.indexed_points = outs.iter().map(|o| o.indexed_points).sum();
            outs.into_iter().map(|o| o.records).collect()
        }
    };
    m.task_input_std = std_dev(&m.task_inputs);
    count_kinds(&mut m, &streams);

    let t = Instant::now();
    let (groups, bytes, dups) = pool.install(|| shuffle_group(streams));
    m.shuffle_time = t.elapsed();
    m.shuffled_bytes = bytes;
    m.duplicate_records = dups;
    m.refine_groups = groups.len();

    let t = Instant::now();
    let refine = cfg.refine;
    let per_group = run_tasks(&pool, "refine", &groups, |(_, recs)| refine_trajectory_with(recs, &params, refine))?;
    m.refine_time = t.elapsed();
    m.match_reports = per_group.iter().map(BTreeSet::len).sum();
    m.duplicate_matches = m.match_reports - per_group.iter().flatten().collect::<BTreeSet<_>>().len();
    let result: BTreeSet<MatchPair> = per_group.into_iter().flatten().map(MatchPair::canonical).collect();
    m.matches = result.len();
    m.total_time = started.elapsed();
    Ok((result, m))
}

/// Writes every job-1 task's records to disk and reads them back for job 2.
fn spill_and_reload(
    pool: &rayon::ThreadPool,
    workdir: &Path,
    points: &[TrajectoryPoint],
    streams: Vec<Vec<PairRecord>>,
) -> Result<Vec<Vec<PairRecord>>> {
    let dir = workdir.join("spill");
    fs::create_dir_all(&dir)?;
    let ids = io::spill_ids(points)?;
    let paths: Vec<PathBuf> = (0..streams.len()).map(|i| dir.join(format!("join-{i:05}.bin"))).collect();
    let jobs: Vec<(&PathBuf, Vec<PairRecord>)> = paths.iter().zip(streams).collect();
    run_tasks(pool, "spill", &jobs, |(path, recs)| {
        let mut buf = Vec::new();
        for r in recs {
            io::encode_record(&mut buf, r);
        }
        fs::write(path, buf)?;
        Ok(())
    })?;
    let out = run_tasks(pool, "read", &paths, |path| io::decode_records(&fs::read(path)?, &ids))?;
    for p in &paths {
        fs::remove_file(p)?;
    }
    Ok(out)
}
