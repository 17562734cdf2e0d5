//! Spatial and trajectory indexes for the indexed join kernel.
//!
//! A quadtree is built once from a sample of the dataset and shared by all
//! tasks; it holds the space partitioning only, never data points. Inside a
//! task two lookup tables are built over the buffer:
//!
//! * the spatial index maps each leaf to the time-ordered buffer positions
//!   of every point whose `eps_sp`-neighbourhood touches that leaf, so the
//!   candidates of a point are found in its own leaf list;
//! * the trajectory index maps each trajectory to its time-ordered buffer
//!   positions, which turns previous/next-point lookups and match probes into
//!   binary searches.

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::within;
use crate::join::{sweep, DupMode, JoinBuffer, JoinUnit, Probe};
use crate::model::{JoinParams, PairRecord, TrajId, TrajectoryPoint};

/// Recursion guard for degenerate samples.
pub const MAX_DEPTH: u32 = 20;

/// Axis-aligned rectangle.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub min_x: f64,
    pub min_y: f64,
    pub max_x: f64,
    pub max_y: f64,
}

impl BBox {
    pub fn of(points: &[(f64, f64)]) -> Option<BBox> {
        let first = points.first()?;
        let mut b = BBox {
            min_x: first.0,
            min_y: first.1,
            max_x: first.0,
            max_y: first.1,
        };
        for &(x, y) in points {
            b.min_x = b.min_x.min(x);
            b.min_y = b.min_y.min(y);
            b.max_x = b.max_x.max(x);
            b.max_y = b.max_y.max(y);
        }
        Some(b)
    }

    fn mid(&self) -> (f64, f64) {
        (0.5 * (self.min_x + self.max_x), 0.5 * (self.min_y + self.max_y))
    }

    pub fn diameter(&self) -> f64 {
        (self.max_x - self.min_x).hypot(self.max_y - self.min_y)
    }

    // children in the order SW, SE, NW, NE
    fn quadrants(&self) -> [BBox; 4] {
        let (mx, my) = self.mid();
        let q = |a: f64, b: f64, c: f64, d: f64| BBox {
            min_x: a,
            min_y: b,
            max_x: c,
            max_y: d,
        };
        [
            q(self.min_x, self.min_y, mx, my),
            q(mx, self.min_y, self.max_x, my),
            q(self.min_x, my, mx, self.max_y),
            q(mx, my, self.max_x, self.max_y),
        ]
    }
}

/// One node of the serialized preorder layout.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuadNode {
    pub bbox: BBox,
    pub depth: u32,
    /// Set on leaves only.
    pub leaf: Option<u32>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct QuadTreeLayout {
    max_points_per_cell: usize,
    nodes: Vec<QuadNode>,
}

/// Point-free quadtree over the sampled extent.
///
/// Points are routed by comparing against node midpoints, so the outer cells
/// extend to infinity and points outside the sampled box land in the nearest
/// boundary leaf.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(into = "QuadTreeLayout", try_from = "QuadTreeLayout")]
pub struct QuadTree {
    pub max_points_per_cell: usize,
    nodes: Vec<QuadNode>,
    children: Vec<Option<[u32; 4]>>,
    leaf_count: u32,
}

impl From<QuadTree> for QuadTreeLayout {
    fn from(t: QuadTree) -> Self {
        QuadTreeLayout {
            max_points_per_cell: t.max_points_per_cell,
            nodes: t.nodes,
        }
    }
}

impl TryFrom<QuadTreeLayout> for QuadTree {
    type Error = Error;

    fn try_from(l: QuadTreeLayout) -> Result<Self> {
        QuadTree::from_nodes(l.nodes, l.max_points_per_cell)
    }
}

/// Leaf-count threshold for a fraction of the sample, at least 1.
pub fn threshold_from_fraction(fraction: f64, sample_size: usize) -> usize {
    ((fraction * sample_size as f64).ceil() as usize).max(1)
}

/// Builds the tree by splitting every node holding more than
/// `max_points_per_cell` sample points.
pub fn build_quadtree(sample: &[(f64, f64)], max_points_per_cell: usize) -> Result<QuadTree> {
    if max_points_per_cell == 0 {
        return Err(Error::InvalidArgument("quadtree threshold must be at least 1".into()));
    }
    if sample.iter().any(|(x, y)| !x.is_finite() || !y.is_finite()) {
        return Err(Error::InvalidArgument("quadtree sample has non-finite coordinates".into()));
    }
    let root = BBox::of(sample).ok_or_else(|| Error::InvalidArgument("empty quadtree sample".into()))?;
    let mut nodes = Vec::new();
    grow(&mut nodes, root, sample.to_vec(), 0, max_points_per_cell);
    QuadTree::from_nodes(nodes, max_points_per_cell)
}

fn grow(nodes: &mut Vec<QuadNode>, bbox: BBox, pts: Vec<(f64, f64)>, depth: u32, cap: usize) {
    if pts.len() <= cap || depth >= MAX_DEPTH {
        nodes.push(QuadNode {
            bbox,
            depth,
            leaf: Some(0),
        });
        return;
    }
    nodes.push(QuadNode {
        bbox,
        depth,
        leaf: None,
    });
    let (mx, my) = bbox.mid();
    let mut parts: [Vec<(f64, f64)>; 4] = Default::default();
    for p in pts {
        parts[quadrant(p.0, p.1, mx, my)].push(p);
    }
    for (q, part) in bbox.quadrants().into_iter().zip(parts) {
        grow(nodes, q, part, depth + 1, cap);
    }
}

fn quadrant(x: f64, y: f64, mx: f64, my: f64) -> usize {
    (x >= mx) as usize + 2 * (y >= my) as usize
}

impl QuadTree {
    /// Rebuilds the tree from its preorder layout, renumbering leaves in order.
    pub fn from_nodes(mut nodes: Vec<QuadNode>, max_points_per_cell: usize) -> Result<Self> {
        let mut children = vec![None; nodes.len()];
        let mut next = 0usize;
        fn walk(
            nodes: &[QuadNode],
            children: &mut [Option<[u32; 4]>],
            next: &mut usize,
        ) -> Result<u32> {
            let me = *next;
            let node = nodes
                .get(me)
                .ok_or_else(|| Error::Manifest("truncated quadtree layout".into()))?;
            *next += 1;
            if node.leaf.is_none() {
                let mut c = [0u32; 4];
                for slot in &mut c {
                    *slot = walk(nodes, children, next)?;
                }
                children[me] = Some(c);
            }
            Ok(me as u32)
        }
        if nodes.is_empty() {
            return Err(Error::Manifest("empty quadtree layout".into()));
        }
        walk(&nodes, &mut children, &mut next)?;
        if next != nodes.len() {
            return Err(Error::Manifest("trailing nodes in quadtree layout".into()));
        }
        let mut leaf_count = 0;
        for n in &mut nodes {
            if n.leaf.is_some() {
                n.leaf = Some(leaf_count);
                leaf_count += 1;
            }
        }
        Ok(QuadTree {
            max_points_per_cell,
            nodes,
            children,
            leaf_count,
        })
    }

    pub fn nodes(&self) -> &[QuadNode] {
        &self.nodes
    }

    pub fn root(&self) -> BBox {
        self.nodes[0].bbox
    }

    pub fn leaf_count(&self) -> usize {
        self.leaf_count as usize
    }

    pub fn height(&self) -> u32 {
        self.nodes.iter().map(|n| n.depth).max().unwrap_or(0)
    }

    pub fn leaves(&self) -> impl Iterator<Item = &QuadNode> {
        self.nodes.iter().filter(|n| n.leaf.is_some())
    }

    /// Diameter of the smallest leaf.
    pub fn min_leaf_diameter(&self) -> f64 {
        self.leaves().map(|n| n.bbox.diameter()).fold(f64::INFINITY, f64::min)
    }

    /// Leaf whose (unexpanded) region contains `(x, y)`.
    pub fn leaf_of(&self, x: f64, y: f64) -> u32 {
        let mut n = 0usize;
        while let Some(c) = self.children[n] {
            let (mx, my) = self.nodes[n].bbox.mid();
            n = c[quadrant(x, y, mx, my)] as usize;
        }
        self.nodes[n].leaf.expect("descent ends at a leaf")
    }

    /// Every leaf whose region expanded by `r` contains `(x, y)`.
    pub fn leaves_within(&self, x: f64, y: f64, r: f64, out: &mut Vec<u32>) {
        // absorb rounding in the subtraction below
        let r = r * (1.0 + 1e-12) + 1e-12 * x.abs().max(y.abs()).max(1.0);
        let mut stack = vec![0usize];
        while let Some(n) = stack.pop() {
            match self.children[n] {
                None => out.push(self.nodes[n].leaf.expect("leaf")),
                Some(c) => {
                    let (mx, my) = self.nodes[n].bbox.mid();
                    let west = x - r < mx;
                    let east = x + r >= mx;
                    let south = y - r < my;
                    let north = y + r >= my;
                    for (q, ok) in [(3, east && north), (2, west && north), (1, east && south), (0, west && south)] {
                        if ok {
                            stack.push(c[q] as usize);
                        }
                    }
                }
            }
        }
    }
}

/// Leaf id to time-ordered buffer positions.
#[derive(Clone, Debug, Default)]
pub struct SpatialIndex {
    lists: Vec<Vec<u32>>,
}

impl SpatialIndex {
    pub fn leaf(&self, leaf: u32) -> &[u32] {
        self.lists.get(leaf as usize).map_or(&[], Vec::as_slice)
    }

    pub fn entries(&self) -> usize {
        self.lists.iter().map(Vec::len).sum()
    }
}

/// Trajectory to time-ordered buffer positions.
#[derive(Clone, Debug, Default)]
pub struct TrajectoryIndex {
    lists: Vec<Vec<u32>>,
}

impl TrajectoryIndex {
    pub fn trajectory(&self, traj: u32) -> &[u32] {
        self.lists.get(traj as usize).map_or(&[], Vec::as_slice)
    }

    pub fn entries(&self) -> usize {
        self.lists.iter().map(Vec::len).sum()
    }
}

/// Per-task indexes over one buffer.
#[derive(Debug)]
pub struct IndexBundle<'t> {
    tree: &'t QuadTree,
    pub spi: SpatialIndex,
    pub tri: TrajectoryIndex,
    cells: Vec<u32>,
    scratch: Vec<u32>,
}

impl<'t> IndexBundle<'t> {
    pub fn new(tree: &'t QuadTree, buf: &JoinBuffer) -> Self {
        IndexBundle {
            tree,
            spi: SpatialIndex {
                lists: vec![Vec::new(); tree.leaf_count()],
            },
            tri: TrajectoryIndex {
                lists: vec![Vec::new(); buf.trajectory_count()],
            },
            cells: Vec::with_capacity(buf.len()),
            scratch: Vec::new(),
        }
    }

    /// Builds both indexes over the whole buffer.
    pub fn build(tree: &'t QuadTree, buf: &JoinBuffer, params: &JoinParams) -> Self {
        let mut b = IndexBundle::new(tree, buf);
        for pos in 0..buf.len() {
            index_insert(&mut b, buf, pos, params);
        }
        b
    }

    pub fn entries(&self) -> usize {
        self.spi.entries() + self.tri.entries()
    }

    /// Original leaf of the point at `pos`.
    pub fn cell(&self, pos: usize) -> u32 {
        self.cells[pos]
    }
}

/// Registers buffer position `pos` (which must be the next one in time order).
///
/// Probe-only context points go into the trajectory index only.
pub fn index_insert(b: &mut IndexBundle<'_>, buf: &JoinBuffer, pos: usize, params: &JoinParams) {
    debug_assert_eq!(b.cells.len(), pos);
    let p = buf.point(pos);
    b.cells.push(b.tree.leaf_of(p.x, p.y));
    b.tri.lists[buf.traj[pos] as usize].push(pos as u32);
    if buf.probe_only[pos] {
        return;
    }
    b.scratch.clear();
    b.tree.leaves_within(p.x, p.y, params.eps_sp, &mut b.scratch);
    for &leaf in &b.scratch {
        b.spi.lists[leaf as usize].push(pos as u32);
    }
}

/// Positions listed under `D[i]`'s own leaf before `i`, newest first.
pub fn spi_candidates<'a>(b: &'a IndexBundle<'_>, i: usize) -> impl Iterator<Item = usize> + 'a {
    let list = b.spi.leaf(b.cells[i]);
    let end = list.partition_point(|&p| (p as usize) < i);
    list[..end].iter().rev().map(|&p| p as usize)
}

/// Previous position of `traj` before `pos`.
pub fn tri_prev_point(b: &IndexBundle<'_>, buf: &JoinBuffer, traj: &TrajId, pos: usize) -> Result<Option<usize>> {
    let id = buf.traj_index(traj).ok_or_else(|| Error::UnknownTrajectory(traj.clone()))?;
    let list = b.tri.trajectory(id);
    let idx = list.partition_point(|&p| (p as usize) < pos);
    Ok(idx.checked_sub(1).map(|k| list[k] as usize))
}

/// Binary-searches `anchor`'s positions for a point joining `D[k]`.
pub fn find_match_indexed(b: &IndexBundle<'_>, buf: &JoinBuffer, anchor: u32, k: usize, params: &JoinParams) -> bool {
    let p = buf.point(k);
    let list = b.tri.trajectory(anchor);
    let lo = list.partition_point(|&q| buf.point(q as usize).t < p.t - params.eps_t);
    list[lo..]
        .iter()
        .map(|&q| q as usize)
        .take_while(|&q| buf.point(q).t <= p.t + params.eps_t)
        .any(|q| q != k && within(p, buf.point(q), params))
}

impl Probe for IndexBundle<'_> {
    fn candidates(&self, buf: &JoinBuffer, i: usize, params: &JoinParams, out: &mut Vec<usize>) {
        let lo = buf.point(i).t - params.eps_t;
        out.extend(spi_candidates(self, i).take_while(|&j| buf.point(j).t >= lo));
    }

    fn prev_of(&self, buf: &JoinBuffer, pos: usize) -> Option<usize> {
        let list = self.tri.trajectory(buf.traj[pos]);
        let idx = list.partition_point(|&p| (p as usize) < pos);
        idx.checked_sub(1).map(|k| list[k] as usize)
    }

    fn next_of(&self, buf: &JoinBuffer, pos: usize) -> Option<usize> {
        let list = self.tri.trajectory(buf.traj[pos]);
        let idx = list.partition_point(|&p| (p as usize) <= pos);
        list.get(idx).map(|&p| p as usize)
    }

    fn find_match(&self, buf: &JoinBuffer, anchor: u32, k: usize, params: &JoinParams) -> bool {
        find_match_indexed(self, buf, anchor, k, params)
    }
}

/// Counters of one indexed join task.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct IndexStats {
    pub build_time: Duration,
    pub spi_entries: usize,
    pub tri_entries: usize,
    pub buffer_len: usize,
}

/// Joins one split with the indexed kernel.
pub fn join_partition_indexed(unit: &impl JoinUnit, tree: &QuadTree, params: &JoinParams) -> Result<Vec<PairRecord>> {
    join_partition_indexed_with_stats(unit, tree, params).map(|(r, _)| r)
}

pub fn join_partition_indexed_with_stats(
    unit: &impl JoinUnit,
    tree: &QuadTree,
    params: &JoinParams,
) -> Result<(Vec<PairRecord>, IndexStats)> {
    let mut buf = JoinBuffer::new(unit, DupMode::BaseRange)?;
    let start = Instant::now();
    let bundle = IndexBundle::build(tree, &buf, params);
    let stats = IndexStats {
        build_time: start.elapsed(),
        spi_entries: bundle.spi.entries(),
        tri_entries: bundle.tri.entries(),
        buffer_len: buf.len(),
    };
    let records = sweep(&mut buf, &bundle, params);
    Ok((records, stats))
}

/// Coordinates of a point set, for building a tree from data.
pub fn coordinates(points: &[TrajectoryPoint]) -> Vec<(f64, f64)> {
    points.iter().map(|p| (p.x, p.y)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::join::{find_match, join_partition};
    use crate::model::{fixtures, Interval, RecordKey};
    use crate::partitioning::Split;
    use proptest::prelude::*;
    use std::collections::BTreeMap;

    fn split_of(points: Vec<TrajectoryPoint>) -> Split {
        Split {
            index: 0,
            group_id: 0,
            base: Interval::new(f64::NEG_INFINITY, f64::INFINITY),
            points,
            context: vec![],
        }
    }

    fn multiset(recs: &[PairRecord]) -> BTreeMap<RecordKey, usize> {
        let mut m = BTreeMap::new();
        for r in recs {
            *m.entry(r.key()).or_default() += 1;
        }
        m
    }

    #[test]
    fn four_quadrant_split() {
        let t = build_quadtree(&[(0.0, 0.0), (1.0, 0.0), (0.0, 1.0), (1.0, 1.0)], 1).unwrap();
        assert_eq!(t.leaf_count(), 4);
        assert_eq!(t.height(), 1);
        let leaves: Vec<_> = [(0.0, 0.0), (1.0, 0.0), (0.0, 1.0), (1.0, 1.0)]
            .iter()
            .map(|&(x, y)| t.leaf_of(x, y))
            .collect();
        assert_eq!(leaves, vec![0, 1, 2, 3]);
    }

    #[test]
    fn identical_points_stop_at_depth_cap() {
        let t = build_quadtree(&[(3.0, 3.0); 5], 1).unwrap();
        assert_eq!(t.height(), MAX_DEPTH);
        let leaf = t.leaf_of(3.0, 3.0);
        let node = t.leaves().find(|n| n.leaf == Some(leaf)).unwrap();
        assert_eq!(node.depth, MAX_DEPTH);
    }

    #[test]
    fn build_errors() {
        assert!(build_quadtree(&[], 1).is_err());
        assert!(build_quadtree(&[(0.0, 0.0)], 0).is_err());
        assert!(build_quadtree(&[(f64::NAN, 0.0)], 1).is_err());
    }

    #[test]
    fn threshold_bounds_leaf_population() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let sample: Vec<(f64, f64)> = (0..10_000).map(|_| (rng.random::<f64>(), rng.random::<f64>())).collect();
        let cap = threshold_from_fraction(0.03, sample.len());
        assert_eq!(cap, 300);
        let t = build_quadtree(&sample, cap).unwrap();
        let mut counts = vec![0usize; t.leaf_count()];
        for &(x, y) in &sample {
            counts[t.leaf_of(x, y) as usize] += 1;
        }
        assert!(counts.iter().all(|&c| c <= cap));
        assert!(t.leaf_count() > 4);
        // regions tile the root
        let area: f64 = t
            .leaves()
            .map(|n| (n.bbox.max_x - n.bbox.min_x) * (n.bbox.max_y - n.bbox.min_y))
            .sum();
        let r = t.root();
        assert!((area - (r.max_x - r.min_x) * (r.max_y - r.min_y)).abs() < 1e-9);
    }

    #[test]
    fn out_of_root_points_clamp() {
        let t = build_quadtree(&[(0.0, 0.0), (1.0, 0.0), (0.0, 1.0), (1.0, 1.0)], 1).unwrap();
        assert_eq!(t.leaf_of(-50.0, -50.0), t.leaf_of(0.0, 0.0));
        assert_eq!(t.leaf_of(50.0, 0.2), t.leaf_of(1.0, 0.0));
    }

    #[test]
    fn expanded_membership() {
        let t = build_quadtree(&[(0.0, 0.0), (4.0, 0.0), (0.0, 4.0), (4.0, 4.0)], 1).unwrap();
        let mut out = Vec::new();
        t.leaves_within(1.0, 1.0, 0.5, &mut out);
        assert_eq!(out.len(), 1);
        out.clear();
        t.leaves_within(2.1, 1.9, 0.5, &mut out);
        out.sort();
        assert_eq!(out, vec![0, 1, 2, 3]);
    }

    #[test]
    fn serde_round_trip() {
        let t = build_quadtree(&[(0.0, 0.0), (1.0, 0.0), (0.0, 1.0), (1.0, 1.0), (0.1, 0.1)], 1).unwrap();
        let json = serde_json::to_string(&t).unwrap();
        let back: QuadTree = serde_json::from_str(&json).unwrap();
        assert_eq!(back, t);
        assert!(serde_json::from_str::<QuadTree>(r#"{"max_points_per_cell":1,"nodes":[]}"#).is_err());
    }

    fn one_leaf() -> QuadTree {
        build_quadtree(&[(0.0, 0.0)], 1).unwrap()
    }

    #[test]
    fn t1_one_leaf_indexes() {
        let (t1, params) = fixtures::t1();
        let split = split_of(fixtures::flatten(&t1));
        let buf = JoinBuffer::new(&split, DupMode::BaseRange).unwrap();
        let tree = one_leaf();
        let b = IndexBundle::build(&tree, &buf, &params);
        assert_eq!(b.spi.leaf(0).len(), 11);
        assert!(b.spi.leaf(0).windows(2).all(|w| buf.point(w[0] as usize).t <= buf.point(w[1] as usize).t));

        let pos = |id: &str, t: f64| (0..buf.len()).find(|&i| buf.point(i).traj_id.as_str() == id && buf.point(i).t == t).unwrap();
        let r2 = pos("r", 2.0);
        let mut cands = Vec::new();
        b.candidates(&buf, r2, &params, &mut cands);
        let ts: Vec<_> = cands.iter().map(|&j| buf.point(j).t).collect();
        assert!(ts.iter().all(|&t| (1.5..=2.0).contains(&t)));
        assert!(!cands.contains(&pos("s", 1.0)));

        let s = TrajId::new("s");
        assert_eq!(tri_prev_point(&b, &buf, &s, pos("s", 3.0)).unwrap(), Some(pos("s", 2.0)));
        assert_eq!(tri_prev_point(&b, &buf, &s, pos("s", 0.0)).unwrap(), None);
        assert!(tri_prev_point(&b, &buf, &TrajId::new("zz"), 0).is_err());
    }

    #[test]
    fn incremental_prev_point() {
        let (t1, params) = fixtures::t1();
        let split = split_of(fixtures::flatten(&t1));
        let buf = JoinBuffer::new(&split, DupMode::BaseRange).unwrap();
        let tree = one_leaf();
        let mut b = IndexBundle::new(&tree, &buf);
        let upto = (0..buf.len()).filter(|&i| buf.point(i).t <= 2.0).count();
        for pos in 0..upto {
            index_insert(&mut b, &buf, pos, &params);
        }
        let s2 = (0..upto).find(|&i| buf.point(i).traj_id.as_str() == "s" && buf.point(i).t == 2.0).unwrap();
        let s1 = (0..upto).find(|&i| buf.point(i).traj_id.as_str() == "s" && buf.point(i).t == 1.0).unwrap();
        assert_eq!(tri_prev_point(&b, &buf, &TrajId::new("s"), s2).unwrap(), Some(s1));
    }

    #[test]
    fn separate_leaves_never_meet() {
        let (t1, params) = fixtures::t1();
        let split = split_of(fixtures::flatten(&t1));
        let buf = JoinBuffer::new(&split, DupMode::BaseRange).unwrap();
        let tree = build_quadtree(&coordinates(&split.points), 1).unwrap();
        let b = IndexBundle::build(&tree, &buf, &params);
        let u = (0..buf.len()).find(|&i| buf.point(i).traj_id.as_str() == "u").unwrap();
        for i in 0..buf.len() {
            if buf.point(i).traj_id.as_str() == "r" {
                assert!(!spi_candidates(&b, i).any(|j| j == u));
            }
        }
    }

    #[test]
    fn kernels_agree_on_fixtures() {
        for (trajs, params) in [fixtures::t1(), fixtures::t2()] {
            let split = split_of(fixtures::flatten(&trajs));
            let plain = join_partition(&split, &params, DupMode::BaseRange).unwrap();
            for tree in [one_leaf(), build_quadtree(&coordinates(&split.points), 1).unwrap()] {
                let indexed = join_partition_indexed(&split, &tree, &params).unwrap();
                assert_eq!(multiset(&plain), multiset(&indexed));
            }
        }
    }

    #[test]
    fn empty_base_emits_nothing() {
        let (t1, params) = fixtures::t1();
        let mut split = split_of(fixtures::flatten(&t1));
        split.base = Interval::new(10.0, 11.0);
        assert!(join_partition_indexed(&split, &one_leaf(), &params).unwrap().is_empty());
    }

    fn arb_points() -> impl Strategy<Value = Vec<TrajectoryPoint>> {
        proptest::collection::vec((0u8..5, 0u16..40, -3.0..3.0f64, -3.0..3.0f64), 1..80).prop_map(|raw| {
            let mut seen = std::collections::HashSet::new();
            let mut pts: Vec<_> = raw
                .into_iter()
                .filter(|(id, t, _, _)| seen.insert((*id, *t)))
                .map(|(id, t, x, y)| TrajectoryPoint::new(format!("t{id}").as_str(), t as f64 * 0.25, x, y))
                .collect();
            pts.sort_by(crate::partitioning::time_order);
            pts
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(200))]

        #[test]
        fn indexed_probes_match_linear(pts in arb_points(), eps in 0.1..2.0f64, et in 0.0..2.0f64, cap in 1usize..6) {
            let params = JoinParams::new(eps, et, 0.0).unwrap();
            let split = split_of(pts);
            let buf = JoinBuffer::new(&split, DupMode::BaseRange).unwrap();
            let tree = build_quadtree(&coordinates(&split.points), cap).unwrap();
            let b = IndexBundle::build(&tree, &buf, &params);
            for k in 0..buf.len() {
                prop_assert_eq!(b.prev_of(&buf, k), crate::join::get_prev_tr_point(&buf, k));
                for anchor in 0..buf.trajectory_count() as u32 {
                    prop_assert_eq!(find_match_indexed(&b, &buf, anchor, k, &params), find_match(&buf, anchor, k, &params));
                }
            }
            let plain = join_partition(&split, &params, DupMode::BaseRange).unwrap();
            let indexed = join_partition_indexed(&split, &tree, &params).unwrap();
            prop_assert_eq!(multiset(&plain), multiset(&indexed));
        }

        #[test]
        fn spi_completeness(pts in arb_points(), eps in 0.05..2.0f64, cap in 1usize..4) {
            let params = JoinParams::new(eps, 1.0, 0.0).unwrap();
            let split = split_of(pts);
            let buf = JoinBuffer::new(&split, DupMode::BaseRange).unwrap();
            let tree = build_quadtree(&coordinates(&split.points), cap).unwrap();
            let b = IndexBundle::build(&tree, &buf, &params);
            for i in 0..buf.len() {
                for j in 0..buf.len() {
                    if crate::geometry::dist_s(buf.point(i), buf.point(j)) <= eps {
                        prop_assert!(b.spi.leaf(b.cell(i)).contains(&(j as u32)));
                    }
                }
            }
        }
    }
}
