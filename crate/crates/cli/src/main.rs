use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;

use trajoin::engine::{prepare, run_pipeline, PipelineConfig, PrepareOptions, Prepared, RunMetrics, Variant};
use trajoin::generate::{generate_dataset, GenSpec, GroupSpec, Skew};
use trajoin::index::{build_quadtree, threshold_from_fraction};
use trajoin::io::{self, POINT_RECORD_BYTES};
use trajoin::oracle::oracle_join;
use trajoin::partitioning::{compute_m, Sampling};
use trajoin::refine::RefineOptions;
use trajoin::{JoinParams, MatchPair, TrajectoryPoint};

#[derive(Parser)]
#[command(name = "trajoin", version, about = "Distributed subtrajectory join on a local worker pool")]
struct Cli {
    /// Directory holding repartitioned files, the manifest and spills.
    #[arg(long, global = true, env = "TRAJOIN_WORKDIR", default_value = "trajoin-work")]
    workdir: PathBuf,

    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,

    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Write a synthetic dataset as CSV.
    Gen(GenArgs),
    /// Sample, repartition into time-sorted files and build the quadtree.
    Repartition(RepartitionArgs),
    /// Run one join pipeline.
    Join(JoinArgs),
    /// Exhaustive reference join (small inputs only).
    Oracle(OracleArgs),
    /// Compare a pipeline (or a result file) with the reference join.
    Verify(VerifyArgs),
    /// Parameter sweeps, one CSV row per run.
    Bench(BenchArgs),
}

#[derive(Args)]
struct GenArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 100)]
    trajectories: usize,
    #[arg(long, default_value_t = 100)]
    points: usize,
    /// Seconds.
    #[arg(long, default_value_t = 86_400.0)]
    duration: f64,
    #[arg(long, default_value_t = 100_000.0)]
    extent: f64,
    #[arg(long, default_value_t = 500.0)]
    step: f64,
    /// Fraction of samples packed into the first `1 - mass` of the time range.
    #[arg(long)]
    skew_mass: Option<f64>,
    #[arg(long)]
    group_size: Option<usize>,
    #[arg(long, default_value_t = 0.5, requires = "group_size")]
    group_coverage: f64,
    #[arg(long, default_value_t = 100.0, requires = "group_size")]
    group_radius: f64,
}

#[derive(Args)]
struct InputArg {
    /// Dataset CSV with header `traj_id,t,x,y`.
    #[arg(long)]
    input: PathBuf,
}

#[derive(Args)]
struct RepartitionArgs {
    #[command(flatten)]
    input: InputArg,
    /// Number of files.
    #[arg(long, conflicts_with = "block_size", required_unless_present = "block_size")]
    blocks: Option<usize>,
    /// Target bytes per file; the file count follows from the dataset size.
    #[arg(long)]
    block_size: Option<u64>,
    #[arg(long, default_value_t = 0.01)]
    sample_rate: f64,
    /// Maximum points per quadtree cell, in percent of the sample.
    #[arg(long, default_value_t = 3.0, conflicts_with = "no_quadtree")]
    quadtree_threshold: f64,
    #[arg(long)]
    no_quadtree: bool,
    /// Cluster size used to group files.
    #[arg(long, default_value_t = 1)]
    workers: usize,
}

#[derive(Clone, Copy, ValueEnum)]
enum TimeUnit {
    Minutes,
    Seconds,
}

#[derive(Args, Clone)]
struct ParamArgs {
    #[arg(long)]
    eps_sp: f64,
    #[arg(long)]
    eps_t: f64,
    #[arg(long)]
    delta_t: f64,
    /// Unit of `--eps-t` and `--delta-t`; data timestamps are seconds.
    #[arg(long, value_enum, default_value_t = TimeUnit::Minutes)]
    time_unit: TimeUnit,
}

fn to_seconds(v: f64, unit: TimeUnit) -> f64 {
    match unit {
        TimeUnit::Minutes => v * 60.0,
        TimeUnit::Seconds => v,
    }
}

impl ParamArgs {
    fn params(&self) -> Result<JoinParams> {
        Ok(JoinParams::new(
            self.eps_sp,
            to_seconds(self.eps_t, self.time_unit),
            to_seconds(self.delta_t, self.time_unit),
        )?)
    }
}

#[derive(Args, Clone)]
struct RunArgs {
    #[arg(long, value_parser = parse_variant, default_value = "dtji")]
    algo: Variant,
    #[arg(long, default_value_t = 1)]
    workers: usize,
    /// Uniform partitions for dtjb; defaults to the worker count.
    #[arg(long)]
    partitions: Option<usize>,
    #[arg(long)]
    ignore_breaking_points: bool,
    #[arg(long)]
    ignore_false_list: bool,
}

fn parse_variant(s: &str) -> Result<Variant, String> {
    s.parse().map_err(|e: trajoin::Error| e.to_string())
}

#[derive(Args)]
struct JoinArgs {
    #[command(flatten)]
    input: InputArg,
    #[command(flatten)]
    params: ParamArgs,
    #[command(flatten)]
    run: RunArgs,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    metrics: Option<PathBuf>,
    /// Per-task input sizes as CSV.
    #[arg(long)]
    task_csv: Option<PathBuf>,
}

#[derive(Args)]
struct OracleArgs {
    #[command(flatten)]
    input: InputArg,
    #[command(flatten)]
    params: ParamArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct VerifyArgs {
    #[command(flatten)]
    input: InputArg,
    #[command(flatten)]
    params: ParamArgs,
    #[command(flatten)]
    run: RunArgs,
    /// Check this result file instead of running a pipeline.
    #[arg(long)]
    results: Option<PathBuf>,
    /// Files for in-memory repartitioning when the workdir has no manifest.
    #[arg(long, default_value_t = 4)]
    blocks: usize,
}

#[derive(Args)]
struct BenchArgs {
    #[command(flatten)]
    input: InputArg,
    #[arg(long, value_parser = parse_variant, value_delimiter = ',', default_value = "dtjb,dtjr,dtji")]
    algos: Vec<Variant>,
    #[arg(long, value_delimiter = ',', default_value = "10,15,20,25,30")]
    eps_t: Vec<f64>,
    #[arg(long, value_delimiter = ',', required = true)]
    eps_sp: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_value = "20")]
    delta_t: Vec<f64>,
    #[arg(long, value_enum, default_value_t = TimeUnit::Minutes)]
    time_unit: TimeUnit,
    #[arg(long, value_delimiter = ',', default_value = "1")]
    workers: Vec<usize>,
    #[arg(long)]
    out: PathBuf,
}

fn load_points(input: &InputArg) -> Result<Vec<TrajectoryPoint>> {
    let points = io::parse_dataset(&input.input).with_context(|| format!("reading {}", input.input.display()))?;
    info!("loaded {} points from {}", points.len(), input.input.display());
    Ok(points)
}

fn gen(args: GenArgs, seed: u64) -> Result<()> {
    let spec = GenSpec {
        n_traj: args.trajectories,
        points_per_traj: args.points,
        duration: args.duration,
        extent: args.extent,
        step: args.step,
        skew: args.skew_mass.map_or(Skew::Uniform, |mass| Skew::Temporal { mass }),
        groups: args.group_size.map(|size| GroupSpec {
            size,
            coverage: args.group_coverage,
            radius: args.group_radius,
        }),
        seed,
    };
    let trajs = generate_dataset(&spec)?;
    io::write_trajectories(&args.out, &trajs)?;
    info!("wrote {} trajectories to {}", trajs.len(), args.out.display());
    Ok(())
}

fn repartition_cmd(args: RepartitionArgs, workdir: &Path, seed: u64) -> Result<()> {
    let points = load_points(&args.input)?;
    if points.is_empty() {
        bail!("{} has no points", args.input.input.display());
    }
    let m = match (args.blocks, args.block_size) {
        (Some(m), _) => m,
        (None, Some(b)) => compute_m(points.len() as u64 * POINT_RECORD_BYTES as u64, b)?,
        (None, None) => unreachable!("clap requires one of --blocks and --block-size"),
    };
    let opts = PrepareOptions {
        m,
        sampling: Sampling {
            rate: args.sample_rate,
            seed,
            ..Default::default()
        },
        workers: args.workers,
        quadtree_fraction: (!args.no_quadtree).then_some(args.quadtree_threshold / 100.0),
    };
    let prepared = prepare(&points, &opts)?;
    let manifest = prepared.store(workdir)?;
    println!(
        "wrote {} files (k = {}) to {}{}",
        manifest.m,
        manifest.k,
        workdir.display(),
        match &manifest.quadtree {
            Some(t) => format!(" with a {}-leaf quadtree", t.leaf_count()),
            None => String::new(),
        }
    );
    Ok(())
}

fn config(run: &RunArgs, params: JoinParams, workdir: &Path, seed: u64) -> PipelineConfig {
    PipelineConfig {
        variant: run.algo,
        workers: run.workers,
        n_parts: run.partitions.unwrap_or(run.workers),
        params,
        seed,
        workdir: Some(workdir.to_path_buf()),
        refine: RefineOptions {
            ignore_breaking_points: run.ignore_breaking_points,
            ignore_false_list: run.ignore_false_list,
        },
    }
}

fn load_prepared(algo: Variant, workdir: &Path) -> Result<Option<Prepared>> {
    if algo == Variant::Dtjb {
        return Ok(None);
    }
    Ok(Some(Prepared::load(workdir)?))
}

fn join_cmd(args: JoinArgs, workdir: &Path, seed: u64) -> Result<()> {
    let params = args.params.params()?;
    let prepared = load_prepared(args.run.algo, workdir)?;
    let points = if args.run.algo == Variant::Dtjb { load_points(&args.input)? } else { Vec::new() };
    let cfg = config(&args.run, params, workdir, seed);
    let (matches, metrics) = run_pipeline(&points, prepared.as_ref(), &cfg)?;
    io::write_results(&args.out, &matches)?;
    if let Some(p) = &args.metrics {
        metrics.write(p)?;
    }
    if let Some(p) = &args.task_csv {
        metrics.write_task_csv(p)?;
    }
    println!("{} matches in {:.3}s", matches.len(), metrics.total_time.as_secs_f64());
    Ok(())
}

fn reference(points: &[TrajectoryPoint], params: &JoinParams) -> Result<BTreeSet<MatchPair>> {
    let trajs = io::to_trajectories(points)?;
    Ok(oracle_join(&trajs, params)?)
}

fn oracle_cmd(args: OracleArgs) -> Result<()> {
    let points = load_points(&args.input)?;
    let matches = reference(&points, &args.params.params()?)?;
    io::write_results(&args.out, &matches)?;
    println!("{} matches", matches.len());
    Ok(())
}

fn verify_cmd(args: VerifyArgs, workdir: &Path, seed: u64) -> Result<bool> {
    let points = load_points(&args.input)?;
    let params = args.params.params()?;
    let expected = io::result_rows(&reference(&points, &params)?);
    let got = match &args.results {
        Some(p) => io::result_rows(&io::read_results(p)?),
        None => {
            let prepared = match args.run.algo {
                Variant::Dtjb => None,
                _ if workdir.join(io::MANIFEST_FILE).exists() => Some(Prepared::load(workdir)?),
                _ => {
                    info!("no manifest in {}, repartitioning in memory", workdir.display());
                    let opts = PrepareOptions {
                        m: args.blocks,
                        sampling: Sampling {
                            rate: 1.0,
                            seed,
                            ..Default::default()
                        },
                        workers: args.run.workers,
                        ..Default::default()
                    };
                    Some(prepare(&points, &opts)?)
                }
            };
            let mut cfg = config(&args.run, params, workdir, seed);
            cfg.workdir = None;
            io::result_rows(&run_pipeline(&points, prepared.as_ref(), &cfg)?.0)
        }
    };
    let missing: Vec<_> = expected.iter().filter(|r| got.binary_search(r).is_err()).collect();
    let extra: Vec<_> = got.iter().filter(|r| expected.binary_search(r).is_err()).collect();
    for r in &missing {
        println!("- {r}");
    }
    for r in &extra {
        println!("+ {r}");
    }
    let ok = missing.is_empty() && extra.is_empty();
    println!(
        "{}: {} expected, {} missing, {} unexpected",
        if ok { "OK" } else { "MISMATCH" },
        expected.len(),
        missing.len(),
        extra.len()
    );
    Ok(ok)
}

const BENCH_HEADER: &str = "algo,workers,eps_sp,eps_t,delta_t,matches,records,shuffled_bytes,task_input_std,\
partition_seconds,join_seconds,shuffle_seconds,refine_seconds,total_seconds,index_build_seconds,index_overhead";

fn bench_row(algo: Variant, workers: usize, sp: f64, et: f64, dt: f64, m: &RunMetrics) -> String {
    format!(
        "{algo},{workers},{sp},{et},{dt},{},{},{},{:.3},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}",
        m.matches,
        m.records(),
        m.shuffled_bytes,
        m.task_input_std,
        m.partition_time.as_secs_f64(),
        m.join_time.as_secs_f64(),
        m.shuffle_time.as_secs_f64(),
        m.refine_time.as_secs_f64(),
        m.total_time.as_secs_f64(),
        m.index_build_time.as_secs_f64(),
        m.index_overhead(),
    )
}

fn bench_cmd(args: BenchArgs, workdir: &Path, seed: u64) -> Result<()> {
    let points = load_points(&args.input)?;
    let needs_prep = args.algos.iter().any(|&a| a != Variant::Dtjb);
    let mut prepared = if needs_prep { Some(Prepared::load(workdir)?) } else { None };
    if let Some(p) = prepared.as_mut().filter(|p| p.tree.is_none() && args.algos.contains(&Variant::Dtji)) {
        let coords: Vec<_> = points.iter().map(|q| (q.x, q.y)).collect();
        p.tree = Some(build_quadtree(&coords, threshold_from_fraction(0.03, coords.len()))?);
    }
    let mut w = BufWriter::new(File::create(&args.out)?);
    writeln!(w, "{BENCH_HEADER}")?;
    for &algo in &args.algos {
        for &workers in &args.workers {
            for &sp in &args.eps_sp {
                for &dt in &args.delta_t {
                    for &et in &args.eps_t {
                        let params =
                            JoinParams::new(sp, to_seconds(et, args.time_unit), to_seconds(dt, args.time_unit))?;
                        let cfg = PipelineConfig {
                            variant: algo,
                            workers,
                            n_parts: workers,
                            params,
                            seed,
                            workdir: Some(workdir.to_path_buf()),
                            refine: RefineOptions::default(),
                        };
                        let (_, m) = run_pipeline(&points, prepared.as_ref(), &cfg)?;
                        info!("{algo} eps_t={et}: {} matches", m.matches);
                        writeln!(w, "{}", bench_row(algo, workers, sp, et, dt, &m))?;
                    }
                }
            }
        }
    }
    w.flush()?;
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let (workdir, seed) = (cli.workdir, cli.seed);
    let outcome = match cli.cmd {
        Cmd::Gen(a) => gen(a, seed).map(|_| true),
        Cmd::Repartition(a) => repartition_cmd(a, &workdir, seed).map(|_| true),
        Cmd::Join(a) => join_cmd(a, &workdir, seed).map(|_| true),
        Cmd::Oracle(a) => oracle_cmd(a).map(|_| true),
        Cmd::Verify(a) => verify_cmd(a, &workdir, seed),
        Cmd::Bench(a) => bench_cmd(a, &workdir, seed).map(|_| true),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
