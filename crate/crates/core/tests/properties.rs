use proptest::prelude::*;

use trajoin::engine::{prepare, run_pipeline, PipelineConfig, PrepareOptions, Prepared, Variant};
use trajoin::generate::{flatten, generate_dataset, random_instance, GenSpec, GroupSpec};
use trajoin::io::{parse_dataset, read_results, result_rows, to_trajectories, write_results, write_trajectories};
use trajoin::oracle::oracle_join;
use trajoin::partitioning::Sampling;

fn small_spec(seed: u64, n_traj: usize, points: usize) -> GenSpec {
    GenSpec {
        n_traj,
        points_per_traj: points,
        duration: 2000.0,
        extent: 300.0,
        step: 8.0,
        groups: Some(GroupSpec {
            size: 2,
            coverage: 0.5,
            radius: 6.0,
        }),
        seed,
        ..Default::default()
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn pipelines_equal_oracle(seed in any::<u64>(), parts in 1usize..7, workers in 1usize..4) {
        let (trajs, params) = random_instance(seed, 10, 30);
        let want = result_rows(&oracle_join(&trajs, &params).unwrap());
        let points = flatten(&trajs);
        let prepared = prepare(&points, &PrepareOptions {
            m: parts,
            sampling: Sampling { rate: 1.0, seed, ..Default::default() },
            workers,
            ..Default::default()
        }).unwrap();
        for v in Variant::ALL {
            let cfg = PipelineConfig::new(v, params).workers(workers).n_parts(parts);
            let (got, m) = run_pipeline(&points, Some(&prepared), &cfg).unwrap();
            prop_assert_eq!(&result_rows(&got), &want, "{}", v);
            // each pair is found once from either side
            prop_assert_eq!(m.match_reports, 2 * m.matches);
            prop_assert_eq!(m.duplicate_records, 0);
        }
    }

    #[test]
    fn csv_round_trip(seed in any::<u64>(), n_traj in 1usize..6, points in 1usize..40) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.csv");
        let trajs = generate_dataset(&GenSpec { groups: None, ..small_spec(seed, n_traj, points) }).unwrap();
        write_trajectories(&path, &trajs).unwrap();
        let back = to_trajectories(&parse_dataset(&path).unwrap()).unwrap();
        prop_assert_eq!(back, trajs);
    }
}

#[test]
fn workdir_round_trip_keeps_results() {
    let dir = tempfile::tempdir().unwrap();
    let trajs = generate_dataset(&small_spec(11, 8, 40)).unwrap();
    let points = flatten(&trajs);
    let params = trajoin::JoinParams::new(6.0, 30.0, 150.0).unwrap();
    let prepared = prepare(
        &points,
        &PrepareOptions {
            m: 5,
            sampling: Sampling::with_rate(1.0),
            workers: 2,
            ..Default::default()
        },
    )
    .unwrap();
    prepared.store(dir.path()).unwrap();
    let loaded = Prepared::load(dir.path()).unwrap();
    assert_eq!(loaded.files, prepared.files);
    assert_eq!(loaded.tree, prepared.tree);

    let cfg = PipelineConfig::new(Variant::Dtji, params).workers(2);
    let (mem, _) = run_pipeline(&points, Some(&prepared), &cfg).unwrap();
    let (disk, _) = run_pipeline(&[], Some(&loaded), &cfg).unwrap();
    assert_eq!(mem, disk);
    assert_eq!(mem, oracle_join(&trajs, &params).unwrap());
    assert!(!mem.is_empty());

    let out = dir.path().join("results.csv");
    write_results(&out, &mem).unwrap();
    assert_eq!(read_results(&out).unwrap(), mem);
}

#[test]
fn tampered_partition_file_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let points = flatten(&generate_dataset(&small_spec(3, 4, 20)).unwrap());
    let prepared = prepare(
        &points,
        &PrepareOptions {
            m: 2,
            sampling: Sampling::with_rate(1.0),
            ..Default::default()
        },
    )
    .unwrap();
    let manifest = prepared.store(dir.path()).unwrap();
    let file = dir.path().join(&manifest.files[0].path);
    let mut bytes = std::fs::read(&file).unwrap();
    bytes[10] ^= 0xff;
    std::fs::write(&file, bytes).unwrap();
    assert!(Prepared::load(dir.path()).is_err());
}
