//! Static KD-tree over 3D points with exact k-nearest-neighbor search.
//!
//! Nodes split at the median of the axis with the largest spread. Leaves hold
//! up to [`DEFAULT_LEAF_SIZE`] points. Results are ordered by `(distance,
//! index)`, so equal distances always resolve to the lower point index and
//! repeated queries are fully deterministic.

use thiserror::Error;

use crate::cloud::{dist2, Point3, PointCloud};

pub const DEFAULT_LEAF_SIZE: usize = 16;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum KdError {
    #[error("cannot build a KD-tree over an empty cloud")]
    EmptyCloud,
    #[error("k = {k} exceeds tree size {size}")]
    KTooLarge { k: usize, size: usize },
    #[error("k must be positive")]
    ZeroK,
}

#[derive(Debug, Clone, Copy)]
enum Node {
    Leaf { start: u32, end: u32 },
    Split { axis: u8, value: f64, right: u32 },
}

/// One query result: point index in the source cloud and Euclidean distance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    pub index: usize,
    pub distance: f64,
}

#[derive(Debug, Clone)]
pub struct KdTree {
    /// Points in leaf order.
    points: Vec<Point3>,
    /// Source index of each entry in `points`.
    indices: Vec<u32>,
    /// Pre-order; the left child of a split is the next node.
    nodes: Vec<Node>,
    leaf_size: usize,
}

impl KdTree {
    pub fn build(cloud: &PointCloud) -> Result<Self, KdError> {
        Self::with_leaf_size(cloud, DEFAULT_LEAF_SIZE)
    }

    pub fn with_leaf_size(cloud: &PointCloud, leaf_size: usize) -> Result<Self, KdError> {
        Self::from_points(cloud.points(), leaf_size)
    }

    pub fn from_points(points: &[Point3], leaf_size: usize) -> Result<Self, KdError> {
        if points.is_empty() {
            return Err(KdError::EmptyCloud);
        }
        assert!(points.len() <= u32::MAX as usize, "cloud too large for u32 indices");
        let leaf_size = leaf_size.max(1);
        let mut items: Vec<(Point3, u32)> = points.iter().enumerate().map(|(i, p)| (*p, i as u32)).collect();
        let mut nodes = Vec::with_capacity(2 * points.len() / leaf_size + 1);
        build_node(&mut items, 0, leaf_size, &mut nodes);
        let (points, indices) = items.into_iter().unzip();
        Ok(Self {
            points,
            indices,
            nodes,
            leaf_size,
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn leaf_size(&self) -> usize {
        self.leaf_size
    }

    /// Number of split levels on the deepest root-to-leaf path.
    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], at: usize) -> (usize, usize) {
            // returns (depth below `at`, index after subtree)
            match nodes[at] {
                Node::Leaf { .. } => (0, at + 1),
                Node::Split { right, .. } => {
                    let (l, _) = walk(nodes, at + 1);
                    let (r, end) = walk(nodes, right as usize);
                    (1 + l.max(r), end)
                }
            }
        }
        walk(&self.nodes, 0).0
    }

    /// The source point with the given index.
    pub fn point(&self, index: usize) -> Option<Point3> {
        self.indices
            .iter()
            .position(|&i| i as usize == index)
            .map(|pos| self.points[pos])
    }

    /// Exact k nearest neighbors sorted by ascending distance, ties by index.
    pub fn knn(&self, query: &Point3, k: usize) -> Result<Vec<Neighbor>, KdError> {
        let mut buf = Vec::with_capacity(k);
        self.knn_into(query, k, &mut buf)?;
        Ok(buf
            .into_iter()
            .map(|(d2, index)| Neighbor {
                index: index as usize,
                distance: d2.sqrt(),
            })
            .collect())
    }

    /// Allocation-free variant of [`KdTree::knn`] returning `(squared
    /// distance, index)` pairs in `out`.
    pub fn knn_into(&self, query: &Point3, k: usize, out: &mut Vec<(f64, u32)>) -> Result<(), KdError> {
        if k == 0 {
            return Err(KdError::ZeroK);
        }
        if k > self.len() {
            return Err(KdError::KTooLarge { k, size: self.len() });
        }
        out.clear();
        self.search(0, query, k, out);
        Ok(())
    }

    /// Nearest neighbor as `(index, distance)`.
    pub fn nearest(&self, query: &Point3) -> (usize, f64) {
        let mut best = (f64::INFINITY, u32::MAX);
        self.search_one(0, query, &mut best);
        (best.1 as usize, best.0.sqrt())
    }

    fn search(&self, at: usize, q: &Point3, k: usize, best: &mut Vec<(f64, u32)>) {
        match self.nodes[at] {
            Node::Leaf { start, end } => {
                for pos in start as usize..end as usize {
                    let cand = (dist2(q, &self.points[pos]), self.indices[pos]);
                    insert_bounded(best, k, cand);
                }
            }
            Node::Split { axis, value, right } => {
                let diff = q[axis as usize] - value;
                let (near, far) = if diff <= 0.0 {
                    (at + 1, right as usize)
                } else {
                    (right as usize, at + 1)
                };
                self.search(near, q, k, best);
                // visit on equality: a tied point with a lower index may live there
                if best.len() < k || diff * diff <= best[best.len() - 1].0 {
                    self.search(far, q, k, best);
                }
            }
        }
    }

    fn search_one(&self, at: usize, q: &Point3, best: &mut (f64, u32)) {
        match self.nodes[at] {
            Node::Leaf { start, end } => {
                for pos in start as usize..end as usize {
                    let cand = (dist2(q, &self.points[pos]), self.indices[pos]);
                    if cand.0 < best.0 || (cand.0 == best.0 && cand.1 < best.1) {
                        *best = cand;
                    }
                }
            }
            Node::Split { axis, value, right } => {
                let diff = q[axis as usize] - value;
                let (near, far) = if diff <= 0.0 {
                    (at + 1, right as usize)
                } else {
                    (right as usize, at + 1)
                };
                self.search_one(near, q, best);
                if diff * diff <= best.0 {
                    self.search_one(far, q, best);
                }
            }
        }
    }
}

/// Keeps `best` sorted ascending by `(d2, index)` and at most `k` long.
#[inline]
fn insert_bounded(best: &mut Vec<(f64, u32)>, k: usize, cand: (f64, u32)) {
    let less = |a: &(f64, u32), b: &(f64, u32)| a.0 < b.0 || (a.0 == b.0 && a.1 < b.1);
    if best.len() == k {
        if !less(&cand, &best[k - 1]) {
            return;
        }
        best.pop();
    }
    let mut pos = best.len();
    while pos > 0 && less(&cand, &best[pos - 1]) {
        pos -= 1;
    }
    best.insert(pos, cand);
}

fn build_node(items: &mut [(Point3, u32)], offset: usize, leaf_size: usize, nodes: &mut Vec<Node>) {
    let leaf = |nodes: &mut Vec<Node>| {
        nodes.push(Node::Leaf {
            start: offset as u32,
            end: (offset + items.len()) as u32,
        })
    };
    if items.len() <= leaf_size {
        leaf(nodes);
        return;
    }
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for (p, _) in items.iter() {
        for a in 0..3 {
            lo[a] = lo[a].min(p[a]);
            hi[a] = hi[a].max(p[a]);
        }
    }
    let axis = (0..3)
        .max_by(|&a, &b| (hi[a] - lo[a]).total_cmp(&(hi[b] - lo[b])))
        .unwrap();
    if hi[axis] - lo[axis] <= 0.0 {
        // all coincident
        leaf(nodes);
        return;
    }
    let mid = items.len() / 2;
    items.select_nth_unstable_by(mid, |a, b| a.0[axis].total_cmp(&b.0[axis]));
    let value = items[mid].0[axis];

    let at = nodes.len();
    nodes.push(Node::Split {
        axis: axis as u8,
        value,
        right: 0,
    });
    let (left, right) = items.split_at_mut(mid);
    build_node(left, offset, leaf_size, nodes);
    let right_at = nodes.len() as u32;
    if let Node::Split { right: r, .. } = &mut nodes[at] {
        *r = right_at;
    }
    build_node(right, offset + mid, leaf_size, nodes);
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Exhaustive scan ordered by (squared distance, index).
    fn brute(points: &[Point3], q: &Point3, k: usize) -> Vec<(f64, u32)> {
        let mut all: Vec<(f64, u32)> = points
            .iter()
            .enumerate()
            .map(|(i, p)| (dist2(q, p), i as u32))
            .collect();
        all.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        all.truncate(k);
        all
    }

    fn cloud(points: Vec<Point3>) -> PointCloud {
        PointCloud::new(points).unwrap()
    }

    #[test]
    fn single_point_is_a_leaf() {
        let t = KdTree::build(&cloud(vec![[1.0, 2.0, 3.0]])).unwrap();
        assert_eq!(t.depth(), 0);
        assert_eq!(t.nearest(&[0.0; 3]).0, 0);
    }

    #[test]
    fn cube_corners_have_depth_three() {
        let corners: Vec<Point3> = (0..8)
            .map(|i| [(i & 1) as f64, ((i >> 1) & 1) as f64, ((i >> 2) & 1) as f64])
            .collect();
        let t = KdTree::with_leaf_size(&cloud(corners), 1).unwrap();
        assert_eq!(t.depth(), 3);
    }

    #[test]
    fn duplicates_return_zero_distances() {
        let t = KdTree::build(&cloud(vec![[0.5, 0.5, 0.5]; 100])).unwrap();
        let res = t.knn(&[0.5, 0.5, 0.5], 10).unwrap();
        assert_eq!(res.len(), 10);
        assert!(res.iter().all(|n| n.distance == 0.0));
        let idx: Vec<usize> = res.iter().map(|n| n.index).collect();
        assert_eq!(idx, (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn self_match_and_tie_break() {
        let t = KdTree::build(&cloud(vec![[0.0; 3], [1.0, 0.0, 0.0]])).unwrap();
        let res = t.knn(&[1.0, 0.0, 0.0], 1).unwrap();
        assert_eq!(
            res[0],
            Neighbor {
                index: 1,
                distance: 0.0
            }
        );
        let res = t.knn(&[0.5, 0.0, 0.0], 2).unwrap();
        assert_eq!(
            res,
            vec![
                Neighbor {
                    index: 0,
                    distance: 0.5
                },
                Neighbor {
                    index: 1,
                    distance: 0.5
                }
            ]
        );
    }

    #[test]
    fn k_errors() {
        let t = KdTree::build(&cloud(vec![[0.0; 3]; 3])).unwrap();
        assert_eq!(t.knn(&[0.0; 3], 4), Err(KdError::KTooLarge { k: 4, size: 3 }));
        assert_eq!(t.knn(&[0.0; 3], 0), Err(KdError::ZeroK));
        assert!(matches!(
            KdTree::build(&PointCloud::default()),
            Err(KdError::EmptyCloud)
        ));
    }

    #[test]
    fn hundred_uniform_points_match_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let pts: Vec<Point3> = (0..100).map(|_| rng.gen()).collect();
        let t = KdTree::build(&cloud(pts.clone())).unwrap();
        for _ in 0..50 {
            let q: Point3 = [rng.gen_range(-0.2..1.2), rng.gen(), rng.gen()];
            let mut got = Vec::new();
            t.knn_into(&q, 16, &mut got).unwrap();
            assert_eq!(got, brute(&pts, &q, 16));
        }
    }

    #[test]
    fn depth_is_logarithmic() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let pts: Vec<Point3> = (0..16_384).map(|_| rng.gen()).collect();
        let t = KdTree::build(&cloud(pts)).unwrap();
        // 16384 / 16 = 1024 leaves -> 10 levels of median splits
        assert_eq!(t.depth(), 10);
    }

    fn lattice_point() -> impl Strategy<Value = Point3> {
        // small integer lattice produces many exact ties and duplicates
        (0i32..6, 0i32..6, 0i32..3).prop_map(|(x, y, z)| [x as f64 * 0.5, y as f64 * 0.5, z as f64])
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn knn_equals_brute_force(
            pts in prop::collection::vec(prop_oneof![lattice_point(), any::<[f64; 3]>().prop_map(|p| p.map(|v| (v % 10.0).abs()).map(|v| if v.is_finite() { v } else { 0.0 }))], 1..600),
            q in lattice_point(),
            k in 1usize..=32,
            leaf in 1usize..20,
        ) {
            let k = k.min(pts.len());
            let before = pts.clone();
            let c = cloud(pts);
            let t = KdTree::with_leaf_size(&c, leaf).unwrap();
            let mut got = Vec::new();
            t.knn_into(&q, k, &mut got).unwrap();
            prop_assert_eq!(&got, &brute(c.points(), &q, k));
            prop_assert!(got.windows(2).all(|w| w[0].0 <= w[1].0));
            let (ni, nd) = t.nearest(&q);
            prop_assert_eq!(ni as u32, got[0].1);
            prop_assert_eq!(nd, got[0].0.sqrt());
            prop_assert_eq!(c.points(), &before[..]);
        }
    }
}
