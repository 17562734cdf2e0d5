//! Synthetic trajectory datasets.
//!
//! Trajectories are Gaussian random walks. Optional co-moving groups make a
//! few trajectories follow a leader closely for part of the time, which
//! guarantees non-trivial matches; optional temporal skew packs most samples
//! into the beginning of the time range. Output depends only on the seed.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{JoinParams, Trajectory, TrajectoryPoint};

/// How timestamps are spread over the time range.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Skew {
    Uniform,
    /// A `mass` fraction of every trajectory's samples falls in the first
    /// `1 - mass` fraction of the time range.
    Temporal { mass: f64 },
}

/// Co-moving groups of `size` trajectories.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupSpec {
    pub size: usize,
    /// Fraction of the duration during which members follow the leader.
    pub coverage: f64,
    /// Members stay within `radius / 2` of the leader, so within `radius` of each other.
    pub radius: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenSpec {
    pub n_traj: usize,
    pub points_per_traj: usize,
    pub duration: f64,
    /// Side of the square the walks start in.
    pub extent: f64,
    /// Standard deviation of one walk step per coordinate.
    pub step: f64,
    pub skew: Skew,
    pub groups: Option<GroupSpec>,
    pub seed: u64,
}

impl Default for GenSpec {
    fn default() -> Self {
        GenSpec {
            n_traj: 100,
            points_per_traj: 100,
            duration: 86_400.0,
            extent: 100_000.0,
            step: 500.0,
            skew: Skew::Uniform,
            groups: None,
            seed: 0,
        }
    }
}

/// Trajectory id used by the generator, zero-padded so lexicographic and
/// numeric order agree.
pub fn traj_name(i: usize) -> String {
    format!("T{i:06}")
}

fn timestamps(rng: &mut ChaCha8Rng, n: usize, duration: f64, skew: Skew) -> Vec<f64> {
    let mut ts: Vec<f64> = match skew {
        Skew::Uniform => (0..n).map(|_| rng.random::<f64>() * duration).collect(),
        Skew::Temporal { mass } => {
            let head = ((mass * n as f64).ceil() as usize).min(n);
            let split = (1.0 - mass) * duration;
            (0..n)
                .map(|i| {
                    let u = rng.random::<f64>();
                    if i < head {
                        u * split
                    } else {
                        split + u * (duration - split)
                    }
                })
                .collect()
        }
    };
    ts.sort_by(f64::total_cmp);
    ts.dedup();
    ts
}

/// Generates a dataset; trajectories are returned in id order.
pub fn generate_dataset(spec: &GenSpec) -> Result<Vec<Trajectory>> {
    if spec.n_traj == 0 || spec.points_per_traj == 0 {
        return Err(Error::InvalidArgument("trajectory and point counts must be positive".into()));
    }
    if !(spec.duration > 0.0 && spec.extent >= 0.0 && spec.step >= 0.0) {
        return Err(Error::InvalidArgument("duration must be positive, extent and step non-negative".into()));
    }
    if let Skew::Temporal { mass } = spec.skew {
        if !(0.0..1.0).contains(&mass) {
            return Err(Error::InvalidArgument(format!("skew mass must be in [0, 1), got {mass}")));
        }
    }
    if let Some(g) = spec.groups {
        if g.size == 0 || g.size > spec.n_traj {
            return Err(Error::InvalidArgument(format!(
                "group size {} does not fit {} trajectories",
                g.size, spec.n_traj
            )));
        }
        if !(0.0..=1.0).contains(&g.coverage) || g.radius < 0.0 {
            return Err(Error::InvalidArgument("group coverage must be in [0, 1], radius non-negative".into()));
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let step = Normal::new(0.0, spec.step).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let mut samples: Vec<Vec<(f64, f64, f64)>> = Vec::with_capacity(spec.n_traj);
    for _ in 0..spec.n_traj {
        let ts = timestamps(&mut rng, spec.points_per_traj, spec.duration, spec.skew);
        let mut x = rng.random::<f64>() * spec.extent;
        let mut y = rng.random::<f64>() * spec.extent;
        let mut walk = Vec::with_capacity(ts.len());
        for t in ts {
            walk.push((t, x, y));
            x += step.sample(&mut rng);
            y += step.sample(&mut rng);
        }
        samples.push(walk);
    }

    if let Some(g) = spec.groups {
        for leader in (0..spec.n_traj - spec.n_traj % g.size).step_by(g.size) {
            let span = g.coverage * spec.duration;
            let start = rng.random::<f64>() * (spec.duration - span);
            let lead = samples[leader].clone();
            for member in leader + 1..leader + g.size {
                let own = std::mem::take(&mut samples[member]);
                let (ox, oy) = (own[0].1 - lead[0].1, own[0].2 - lead[0].2);
                samples[member] = lead
                    .iter()
                    .map(|&(t, lx, ly)| {
                        if (start..=start + span).contains(&t) {
                            let r = 0.5 * g.radius * rng.random::<f64>().sqrt();
                            let a = rng.random::<f64>() * std::f64::consts::TAU;
                            (t, lx + r * a.cos(), ly + r * a.sin())
                        } else {
                            (t, lx + ox, ly + oy)
                        }
                    })
                    .collect();
            }
        }
    }

    samples
        .iter()
        .enumerate()
        .map(|(i, s)| Trajectory::from_samples(traj_name(i).as_str(), s))
        .collect()
}

/// All points of a dataset, sorted by time then trajectory id.
pub fn flatten(trajs: &[Trajectory]) -> Vec<TrajectoryPoint> {
    crate::model::fixtures::flatten(trajs)
}

/// A small random instance for exactness testing: 3 to `max_traj`
/// trajectories of 5 to `max_points` samples on a shared, partly jittered
/// time grid, some of them noisy copies of others, with parameters drawn
/// across regimes (including `2 * eps_t >= delta_t`).
pub fn random_instance(seed: u64, max_traj: usize, max_points: usize) -> (Vec<Trajectory>, JoinParams) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_traj = rng.random_range(3..=max_traj.max(3));
    let jitter = rng.random_bool(0.5);
    let mut samples: Vec<Vec<(f64, f64, f64)>> = Vec::new();
    for i in 0..n_traj {
        let n = rng.random_range(5..=max_points.max(5));
        let start = rng.random_range(0..20) as f64;
        let mut t = start;
        let copy_of = (i > 0 && rng.random_bool(0.4)).then(|| rng.random_range(0..i));
        let pts: Vec<(f64, f64, f64)> = match copy_of {
            Some(src) => {
                let mut out = Vec::new();
                for &(t, x, y) in &samples[src] {
                    if !rng.random_bool(0.85) {
                        continue;
                    }
                    let noise = if rng.random_bool(0.15) { 4.0 } else { 0.6 };
                    out.push((t, x + rng.random_range(-noise..noise), y + rng.random_range(-noise..noise)));
                }
                if out.len() < 5 {
                    out = samples[src].clone();
                }
                out
            }
            None => {
                let (mut x, mut y) = (rng.random_range(0.0..8.0), rng.random_range(0.0..8.0));
                (0..n)
                    .map(|_| {
                        let s = (t + if jitter { rng.random_range(-0.3..0.3) } else { 0.0 }, x, y);
                        t += rng.random_range(1..=3) as f64;
                        x += rng.random_range(-1.5..1.5);
                        y += rng.random_range(-1.5..1.5);
                        s
                    })
                    .collect()
            }
        };
        let mut pts = pts;
        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
        pts.dedup_by(|a, b| a.0 == b.0);
        if pts.is_empty() {
            pts.push((start, 0.0, 0.0));
        }
        samples.push(pts);
    }
    let trajs = samples
        .iter()
        .enumerate()
        .map(|(i, s)| Trajectory::from_samples(format!("r{i:02}").as_str(), s).expect("valid samples"))
        .collect();
    let eps_sp = rng.random_range(0.5..3.0);
    let eps_t = [0.0, 0.5, 1.0, 1.5, 2.5][rng.random_range(0..5)];
    let delta_t = rng.random_range(0.0..10.0f64).round();
    (trajs, JoinParams::new(eps_sp, eps_t, delta_t).expect("valid params"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::oracle_join;

    #[test]
    fn deterministic() {
        let spec = GenSpec {
            n_traj: 5,
            points_per_traj: 20,
            groups: Some(GroupSpec {
                size: 2,
                coverage: 0.5,
                radius: 10.0,
            }),
            seed: 9,
            ..Default::default()
        };
        assert_eq!(generate_dataset(&spec).unwrap(), generate_dataset(&spec).unwrap());
    }

    #[test]
    fn temporal_skew_mass() {
        let spec = GenSpec {
            n_traj: 10,
            points_per_traj: 1000,
            skew: Skew::Temporal { mass: 0.9 },
            ..Default::default()
        };
        let pts = flatten(&generate_dataset(&spec).unwrap());
        let head = pts.iter().filter(|p| p.t < 0.1 * spec.duration).count();
        assert!(head as f64 >= 0.9 * pts.len() as f64, "{head}");
    }

    #[test]
    fn groups_produce_matches() {
        let spec = GenSpec {
            n_traj: 6,
            points_per_traj: 40,
            duration: 400.0,
            extent: 1000.0,
            step: 5.0,
            groups: Some(GroupSpec {
                size: 3,
                coverage: 0.5,
                radius: 4.0,
            }),
            seed: 3,
            ..Default::default()
        };
        let trajs = generate_dataset(&spec).unwrap();
        let params = JoinParams::new(4.0, 0.0, 20.0).unwrap();
        let found = oracle_join(&trajs, &params).unwrap();
        for g in [0, 3] {
            for a in g..g + 3 {
                for b in a + 1..g + 3 {
                    let (na, nb) = (traj_name(a), traj_name(b));
                    assert!(
                        found.iter().any(|m| m.sub_r.traj_id.as_str() == na && m.sub_s.traj_id.as_str() == nb),
                        "no match between {na} and {nb}"
                    );
                }
            }
        }
    }

    #[test]
    fn rejects_contradictions() {
        let spec = GenSpec {
            n_traj: 2,
            groups: Some(GroupSpec {
                size: 3,
                coverage: 0.5,
                radius: 1.0,
            }),
            ..Default::default()
        };
        assert!(generate_dataset(&spec).is_err());
        assert!(generate_dataset(&GenSpec {
            n_traj: 0,
            ..Default::default()
        })
        .is_err());
    }

    #[test]
    fn random_instances_are_valid() {
        for seed in 0..50 {
            let (trajs, _) = random_instance(seed, 20, 50);
            assert!((3..=20).contains(&trajs.len()));
            assert!(trajs.iter().all(|t| (5..=50).contains(&t.len())));
        }
    }
}
