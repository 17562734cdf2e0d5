//! Brute-force reference implementation of the subtrajectory join.
//!
//! Everything here works straight from the definitions over the Cartesian
//! product of points, with no partitioning, sweeping or indexing. It is meant
//! for small inputs (a few dozen trajectories of at most
//! [`MAX_ORACLE_POINTS`] points) and is the yardstick the pipelines are tested
//! against.

use std::collections::{BTreeSet, HashMap};

use crate::error::{Error, Result};
use crate::geometry::{dist_t, within};
use crate::model::{JoinParams, MatchPair, PointKey, Subtrajectory, Trajectory};

/// Longest trajectory the subtrajectory enumeration accepts.
pub const MAX_ORACLE_POINTS: usize = 128;

/// Exhaustive classification of cross-trajectory point pairs.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct PairClassification {
    /// Joining pairs, in both orders.
    pub jp: BTreeSet<(PointKey, PointKey)>,
    /// Points without a joining partner in any other trajectory.
    pub bp: BTreeSet<PointKey>,
    /// Ordered pairs `(a, b)` of non-breaking points that do not join.
    pub njp: BTreeSet<(PointKey, PointKey)>,
    /// `(r_i, s_j)` where `s_j` is a necessary non-joining neighbour w.r.t. `r_i`.
    pub snjp: BTreeSet<(PointKey, PointKey)>,
}

/// Classifies every cross-trajectory point pair by nested loops.
pub fn classify_point_pairs(trajs: &[Trajectory], params: &JoinParams) -> PairClassification {
    let mut out = PairClassification::default();
    for (ai, a) in trajs.iter().enumerate() {
        for p in &a.points {
            let mut any = false;
            for (bi, b) in trajs.iter().enumerate() {
                if ai == bi || a.id == b.id {
                    continue;
                }
                for q in &b.points {
                    if within(p, q, params) {
                        out.jp.insert((p.key(), q.key()));
                        any = true;
                    }
                }
            }
            if !any {
                out.bp.insert(p.key());
            }
        }
    }

    for (ai, a) in trajs.iter().enumerate() {
        for (bi, b) in trajs.iter().enumerate() {
            if ai == bi || a.id == b.id {
                continue;
            }
            for p in &a.points {
                if out.bp.contains(&p.key()) {
                    continue;
                }
                for q in &b.points {
                    if !out.bp.contains(&q.key()) && !within(p, q, params) {
                        out.njp.insert((p.key(), q.key()));
                    }
                }
            }
        }
    }

    // sNJP: s_j non-joining w.r.t. r_i, a neighbour of s_j joins some r_p
    // (p != i), and r_i is strictly the closest point of r to s_j in time.
    for r in trajs {
        for s in trajs {
            if r.id == s.id {
                continue;
            }
            for (i, ri) in r.points.iter().enumerate() {
                for (j, sj) in s.points.iter().enumerate() {
                    if !out.njp.contains(&(ri.key(), sj.key())) {
                        continue;
                    }
                    let neighbour_joins = [j.checked_sub(1), Some(j + 1)]
                        .into_iter()
                        .flatten()
                        .filter_map(|n| s.points.get(n))
                        .any(|sn| {
                            r.points
                                .iter()
                                .enumerate()
                                .any(|(p, rp)| p != i && within(rp, sn, params))
                        });
                    if !neighbour_joins {
                        continue;
                    }
                    let d = dist_t(ri, sj);
                    let closer = r
                        .points
                        .iter()
                        .enumerate()
                        .any(|(q, rq)| q != i && dist_t(rq, sj) <= d);
                    if !closer {
                        out.snjp.insert((ri.key(), sj.key()));
                    }
                }
            }
        }
    }
    out
}

/// Information the oracle may be told to ignore, mirroring algorithms that
/// drop breaking points or non-joining points.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Ablation {
    None,
    /// Points without any partner anywhere are removed before matching.
    IgnoreBreakingPoints,
    /// For each trajectory pair, points that have partners elsewhere but none
    /// in the counterpart are removed before matching.
    IgnoreNonJoining,
}

/// All maximal matching subtrajectory pairs, canonicalized (smaller id first).
pub fn oracle_join(trajs: &[Trajectory], params: &JoinParams) -> Result<BTreeSet<MatchPair>> {
    oracle_join_ablated(trajs, params, Ablation::None)
}

pub fn oracle_join_ablated(
    trajs: &[Trajectory],
    params: &JoinParams,
    ablation: Ablation,
) -> Result<BTreeSet<MatchPair>> {
    if let Some(t) = trajs.iter().find(|t| t.len() > MAX_ORACLE_POINTS) {
        return Err(Error::InvalidArgument(format!(
            "oracle supports at most {MAX_ORACLE_POINTS} points per trajectory; `{}` has {}",
            t.id,
            t.len()
        )));
    }

    let has_partner = |traj: &Trajectory, idx: usize| {
        trajs.iter().any(|o| {
            o.id != traj.id && o.points.iter().any(|q| within(&traj.points[idx], q, params))
        })
    };
    let breaking: HashMap<&str, Vec<bool>> = trajs
        .iter()
        .map(|t| (t.id.as_str(), (0..t.len()).map(|i| !has_partner(t, i)).collect()))
        .collect();

    let mut out = BTreeSet::new();
    for (ai, a) in trajs.iter().enumerate() {
        for b in &trajs[ai + 1..] {
            if a.id == b.id {
                continue;
            }
            let keep = |t: &Trajectory, other: &Trajectory| -> Vec<usize> {
                (0..t.len())
                    .filter(|&i| match ablation {
                        Ablation::None => true,
                        Ablation::IgnoreBreakingPoints => !breaking[t.id.as_str()][i],
                        Ablation::IgnoreNonJoining => {
                            breaking[t.id.as_str()][i]
                                || other.points.iter().any(|q| within(&t.points[i], q, params))
                        }
                    })
                    .collect()
            };
            let ka = keep(a, b);
            let kb = keep(b, a);
            for m in maximal_matches(a, &ka, b, &kb, params) {
                out.insert(m.canonical());
            }
        }
    }
    Ok(out)
}

/// Enumerates every contiguous range pair over the kept points of `r` and `s`,
/// keeps those satisfying the matching definition, then those not strictly
/// contained in another matching pair.
fn maximal_matches(
    r: &Trajectory,
    r_keep: &[usize],
    s: &Trajectory,
    s_keep: &[usize],
    params: &JoinParams,
) -> Vec<MatchPair> {
    let n = r_keep.len();
    let m = s_keep.len();
    let bit = |i: usize| 1u128 << i;
    let adj_r: Vec<u128> = r_keep
        .iter()
        .map(|&i| {
            (0..m)
                .filter(|&k| within(&r.points[i], &s.points[s_keep[k]], params))
                .fold(0, |acc, k| acc | bit(k))
        })
        .collect();
    let adj_s: Vec<u128> = s_keep
        .iter()
        .map(|&k| {
            (0..n)
                .filter(|&i| within(&s.points[k], &r.points[r_keep[i]], params))
                .fold(0, |acc, i| acc | bit(i))
        })
        .collect();

    let sub = |t: &Trajectory, keep: &[usize], lo: usize, hi: usize| {
        Subtrajectory::new(t.id.clone(), t.points[keep[lo]].t, t.points[keep[hi]].t)
    };

    let mut matching: Vec<(usize, usize, usize, usize)> = Vec::new();
    for a in 0..n {
        let mut i_mask = 0u128;
        let mut s_covered = 0u128;
        for b in a..n {
            if adj_r[b] == 0 {
                break;
            }
            i_mask |= bit(b);
            s_covered |= adj_r[b];
            for c in 0..m {
                let mut r_covered = 0u128;
                for d in c..m {
                    if s_covered & bit(d) == 0 {
                        break;
                    }
                    r_covered |= adj_s[d];
                    if i_mask & !r_covered != 0 {
                        continue;
                    }
                    let pair = MatchPair::new(sub(r, r_keep, a, b), sub(s, s_keep, c, d));
                    if pair.lifespan().duration() >= params.min_lifespan() {
                        matching.push((a, b, c, d));
                    }
                }
            }
        }
    }

    matching.sort_by_key(|&(a, b, c, d)| std::cmp::Reverse((b - a) + (d - c)));
    let mut maximal: Vec<(usize, usize, usize, usize)> = Vec::new();
    for cand in matching {
        let (a, b, c, d) = cand;
        let contained = maximal
            .iter()
            .any(|&(a2, b2, c2, d2)| a2 <= a && b <= b2 && c2 <= c && d <= d2);
        if !contained {
            maximal.push(cand);
        }
    }
    maximal
        .into_iter()
        .map(|(a, b, c, d)| MatchPair::new(sub(r, r_keep, a, b), sub(s, s_keep, c, d)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::fixtures;

    fn key(trajs: &[Trajectory], ti: usize, pi: usize) -> PointKey {
        trajs[ti].points[pi].key()
    }

    #[test]
    fn classify_t1() {
        let (t1, params) = fixtures::t1();
        let c = classify_point_pairs(&t1, &params);
        let mut expected = BTreeSet::new();
        for i in 0..5 {
            expected.insert((key(&t1, 0, i), key(&t1, 1, i)));
            expected.insert((key(&t1, 1, i), key(&t1, 0, i)));
        }
        assert_eq!(c.jp, expected);
        assert_eq!(c.bp, BTreeSet::from([key(&t1, 2, 0)]));
        assert!(c.snjp.is_empty());
    }

    #[test]
    fn classify_t2() {
        let (t2, params) = fixtures::t2();
        let c = classify_point_pairs(&t2, &params);
        assert!(c.bp.contains(&key(&t2, 0, 3)));
        assert!(c.bp.contains(&key(&t2, 1, 3)));
        assert_eq!(c.jp.len(), 12);
    }

    #[test]
    fn classify_single_trajectory() {
        let (t1, params) = fixtures::t1();
        let c = classify_point_pairs(&t1[..1], &params);
        assert!(c.jp.is_empty());
        assert_eq!(c.bp.len(), 5);
    }

    #[test]
    fn classification_partitions_the_product() {
        let (t2, params) = fixtures::t2();
        let c = classify_point_pairs(&t2, &params);
        // every ordered cross pair is JP, NJP, or touches a BP
        for a in &t2 {
            for b in &t2 {
                if a.id == b.id {
                    continue;
                }
                for p in &a.points {
                    for q in &b.points {
                        let k = (p.key(), q.key());
                        let in_jp = c.jp.contains(&k);
                        let in_njp = c.njp.contains(&k);
                        let touches_bp = c.bp.contains(&k.0) || c.bp.contains(&k.1);
                        assert_eq!(in_jp as u8 + in_njp as u8 + (touches_bp && !in_jp) as u8, 1);
                    }
                }
            }
        }
        assert!(c.snjp.is_subset(&c.njp));
    }

    #[test]
    fn snjp_nearest_in_time() {
        // s moves with r except s_2 which drifts off but stays close to a third trajectory.
        let r = Trajectory::from_samples("r", &[(0.0, 0.0, 0.0), (1.0, 1.0, 0.0), (2.0, 2.0, 0.0), (3.0, 3.0, 0.0)]).unwrap();
        let s = Trajectory::from_samples("s", &[(0.0, 0.0, 0.5), (1.0, 1.0, 0.5), (2.0, 2.0, 9.0), (3.0, 3.0, 0.5)]).unwrap();
        let u = Trajectory::from_samples("u", &[(2.0, 2.0, 9.5)]).unwrap();
        // keeps r_2 from being a breaking point
        let v = Trajectory::from_samples("v", &[(2.0, 2.0, -0.3)]).unwrap();
        let trajs = vec![r, s, u, v];
        let params = JoinParams::new(1.0, 0.5, 0.0).unwrap();
        let c = classify_point_pairs(&trajs, &params);
        // s_2 is non-joining w.r.t. r_2, the only r point nearest to it in time
        assert!(c.snjp.contains(&(key(&trajs, 0, 2), key(&trajs, 1, 2))));
        assert!(!c.snjp.contains(&(key(&trajs, 0, 0), key(&trajs, 1, 2))));
    }

    #[test]
    fn oracle_t1() {
        let (t1, params) = fixtures::t1();
        let got = oracle_join(&t1, &params).unwrap();
        let want = BTreeSet::from([MatchPair::new(
            Subtrajectory::from_indices(&t1[0], 0, 4),
            Subtrajectory::from_indices(&t1[1], 0, 4),
        )]);
        assert_eq!(got, want);
    }

    #[test]
    fn oracle_t2_two_maximal_matches() {
        let (t2, params) = fixtures::t2();
        let got = oracle_join(&t2, &params).unwrap();
        let want = BTreeSet::from([
            MatchPair::new(
                Subtrajectory::from_indices(&t2[0], 0, 2),
                Subtrajectory::from_indices(&t2[1], 0, 2),
            ),
            MatchPair::new(
                Subtrajectory::from_indices(&t2[0], 4, 6),
                Subtrajectory::from_indices(&t2[1], 4, 6),
            ),
        ]);
        assert_eq!(got, want);
    }

    #[test]
    fn oracle_t1_long_delta_is_empty() {
        let (t1, _) = fixtures::t1();
        let params = JoinParams::new(1.0, 0.5, 100.0).unwrap();
        assert!(oracle_join(&t1, &params).unwrap().is_empty());
    }

    #[test]
    fn maximality_needs_joint_extension() {
        // r_i joins only s_i: extending one side alone never matches,
        // but the full diagonal does.
        let (t1, params) = fixtures::t1();
        let params = JoinParams::new(params.eps_sp, params.eps_t, 0.0).unwrap();
        let got = oracle_join(&t1[..2], &params).unwrap();
        assert_eq!(got.len(), 1);
        let m = got.iter().next().unwrap();
        assert_eq!((m.sub_r.start_t, m.sub_r.end_t), (0.0, 4.0));
    }

    #[test]
    fn rejects_oversized_trajectories() {
        let samples: Vec<_> = (0..200).map(|i| (i as f64, 0.0, 0.0)).collect();
        let t = Trajectory::from_samples("big", &samples).unwrap();
        let params = JoinParams::new(1.0, 1.0, 1.0).unwrap();
        assert!(oracle_join(&[t], &params).is_err());
    }
}
