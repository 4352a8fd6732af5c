//! Exact k-nearest-neighbour search over a point cloud.

use std::cmp::Ordering;

use crate::error::{Error, Result};
use crate::point_set::{Point3, PointCloud};

pub const DEFAULT_LEAF_SIZE: usize = 16;

#[derive(Debug, Clone, PartialEq)]
pub enum Node {
    Leaf {
        start: usize,
        end: usize,
    },
    Split {
        axis: usize,
        value: f64,
        start: usize,
        end: usize,
        left: usize,
        right: usize,
    },
}

/// KD-tree with median splits on the axis of widest spread.
///
/// Points are stored permuted into leaf order so leaf scans are contiguous.
/// `order[i]` is the cloud index of the i-th stored point.
#[derive(Debug, Clone, PartialEq)]
pub struct KdTree {
    cloud_id: String,
    nodes: Vec<Node>,
    points: Vec<Point3>,
    order: Vec<usize>,
    slot_of: Vec<usize>,
}

impl KdTree {
    pub fn build(cloud: &PointCloud) -> KdTree {
        Self::with_leaf_size(cloud, DEFAULT_LEAF_SIZE)
    }

    pub fn with_leaf_size(cloud: &PointCloud, leaf_size: usize) -> KdTree {
        let leaf_size = leaf_size.max(1);
        let src = cloud.points();
        let mut order: Vec<usize> = (0..src.len()).collect();
        let mut nodes = Vec::new();
        build_node(src, &mut order, 0, src.len(), leaf_size, &mut nodes);

        let points = order.iter().map(|&i| src[i]).collect();
        let mut slot_of = vec![0; src.len()];
        for (slot, &i) in order.iter().enumerate() {
            slot_of[i] = slot;
        }
        KdTree {
            cloud_id: cloud.id().to_string(),
            nodes,
            points,
            order,
            slot_of,
        }
    }

    pub fn cloud_id(&self) -> &str {
        &self.cloud_id
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Node 0 is the root.
    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    /// Cloud indices held by a node, in storage order.
    pub fn node_indices(&self, node: &Node) -> &[usize] {
        let (start, end) = match *node {
            Node::Leaf { start, end } | Node::Split { start, end, .. } => (start, end),
        };
        &self.order[start..end]
    }

    pub fn point(&self, index: usize) -> Point3 {
        self.points[self.slot_of[index]]
    }

    /// The `k` nearest other points to `query_index`, by ascending squared
    /// distance and then ascending index.
    pub fn knn(&self, query_index: usize, k: usize) -> Result<Vec<usize>> {
        let mut out = Vec::with_capacity(k);
        self.knn_into(query_index, k, &mut out)?;
        Ok(out)
    }

    /// [`KdTree::knn`] writing into a caller-owned buffer.
    pub fn knn_into(&self, query_index: usize, k: usize, out: &mut Vec<usize>) -> Result<()> {
        let n = self.len();
        if query_index >= n {
            return Err(Error::InvalidParam(format!(
                "query index {query_index} out of range for {n} points"
            )));
        }
        if k + 1 > n {
            return Err(Error::TooManyNeighbors { k, points: n });
        }
        out.clear();
        if k == 0 {
            return Ok(());
        }
        let mut search = Search {
            tree: self,
            query: self.point(query_index),
            exclude: query_index,
            k,
            best: Vec::with_capacity(k + 1),
        };
        search.visit(0);
        out.extend(search.best.iter().map(|&(_, i)| i));
        Ok(())
    }
}

fn build_node(
    src: &[Point3],
    order: &mut [usize],
    start: usize,
    end: usize,
    leaf_size: usize,
    nodes: &mut Vec<Node>,
) -> usize {
    let id = nodes.len();
    if end - start <= leaf_size {
        nodes.push(Node::Leaf { start, end });
        return id;
    }
    let range = &mut order[start..end];
    let axis = widest_axis(src, range);
    let mid = range.len() / 2;
    range.select_nth_unstable_by(mid, |&a, &b| {
        src[a][axis]
            .total_cmp(&src[b][axis])
            .then(a.cmp(&b))
    });
    let value = src[range[mid]][axis];
    nodes.push(Node::Leaf { start, end });
    let left = build_node(src, order, start, start + mid, leaf_size, nodes);
    let right = build_node(src, order, start + mid, end, leaf_size, nodes);
    nodes[id] = Node::Split {
        axis,
        value,
        start,
        end,
        left,
        right,
    };
    id
}

fn widest_axis(src: &[Point3], idx: &[usize]) -> usize {
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for &i in idx {
        for a in 0..3 {
            lo[a] = lo[a].min(src[i][a]);
            hi[a] = hi[a].max(src[i][a]);
        }
    }
    let mut best = 0;
    for a in 1..3 {
        if hi[a] - lo[a] > hi[best] - lo[best] {
            best = a;
        }
    }
    best
}

#[inline]
pub(crate) fn dist2(a: Point3, b: Point3) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    dx * dx + dy * dy + dz * dz
}

fn cmp_candidate(a: &(f64, usize), b: &(f64, usize)) -> Ordering {
    a.0.total_cmp(&b.0).then(a.1.cmp(&b.1))
}

struct Search<'a> {
    tree: &'a KdTree,
    query: Point3,
    exclude: usize,
    k: usize,
    // sorted ascending, at most k entries
    best: Vec<(f64, usize)>,
}

impl Search<'_> {
    fn worst(&self) -> Option<f64> {
        if self.best.len() < self.k {
            None
        } else {
            self.best.last().map(|c| c.0)
        }
    }

    fn offer(&mut self, cand: (f64, usize)) {
        if self.best.len() == self.k {
            match cmp_candidate(&cand, self.best.last().unwrap()) {
                Ordering::Less => {
                    self.best.pop();
                }
                _ => return,
            }
        }
        let pos = self
            .best
            .partition_point(|c| cmp_candidate(c, &cand) == Ordering::Less);
        self.best.insert(pos, cand);
    }

    fn visit(&mut self, node: usize) {
        match self.tree.nodes[node] {
            Node::Leaf { start, end } => {
                for slot in start..end {
                    let index = self.tree.order[slot];
                    if index == self.exclude {
                        continue;
                    }
                    let d = dist2(self.query, self.tree.points[slot]);
                    self.offer((d, index));
                }
            }
            Node::Split {
                axis,
                value,
                left,
                right,
                ..
            } => {
                let diff = self.query[axis] - value;
                let (near, far) = if diff < 0.0 { (left, right) } else { (right, left) };
                self.visit(near);
                // `<=` keeps equal-distance candidates reachable for the index tie-break
                if self.worst().is_none_or(|w| diff * diff <= w) {
                    self.visit(far);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{self, Domain};
    use rand::Rng;

    fn brute_knn(cloud: &PointCloud, q: usize, k: usize) -> Vec<usize> {
        let p = cloud.point(q);
        let mut all: Vec<(f64, usize)> = (0..cloud.len())
            .filter(|&i| i != q)
            .map(|i| {
                let o = cloud.point(i);
                let d: f64 = (0..3).map(|a| (p[a] - o[a]) * (p[a] - o[a])).sum();
                (d, i)
            })
            .collect();
        all.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
        all.truncate(k);
        all.into_iter().map(|(_, i)| i).collect()
    }

    fn line(xs: &[f64]) -> PointCloud {
        PointCloud::new("line", xs.iter().map(|&x| [x, 0.0, 0.0]).collect()).unwrap()
    }

    #[test]
    fn single_point_is_one_leaf() {
        let t = KdTree::build(&line(&[3.0]));
        assert_eq!(t.nodes(), &[Node::Leaf { start: 0, end: 1 }]);
        assert_eq!(t.knn(0, 0).unwrap(), Vec::<usize>::new());
    }

    #[test]
    fn collinear_root_splits_x_at_median() {
        let cloud = line(&[3.0, 0.0, 2.0, 1.0]);
        let t = KdTree::with_leaf_size(&cloud, 1);
        match &t.nodes()[0] {
            Node::Split {
                axis, value, left, right, ..
            } => {
                assert_eq!(*axis, 0);
                assert_eq!(*value, 2.0);
                let mut l = t.node_indices(&t.nodes()[*left]).to_vec();
                let mut r = t.node_indices(&t.nodes()[*right]).to_vec();
                l.sort();
                r.sort();
                assert_eq!(l, vec![1, 3]);
                assert_eq!(r, vec![0, 2]);
            }
            other => panic!("root is {other:?}"),
        }
    }

    #[test]
    fn every_index_in_exactly_one_leaf_and_split_invariant() {
        let mut rng = rng::stream(5, Domain::Synth, 1);
        let pts: Vec<Point3> = (0..300)
            .map(|_| [rng.gen(), rng.gen::<f64>() * 3.0, rng.gen::<f64>() * 0.1])
            .collect();
        let cloud = PointCloud::new("r", pts).unwrap();
        let t = KdTree::with_leaf_size(&cloud, 4);
        let mut seen = vec![0; cloud.len()];
        for node in t.nodes() {
            match node {
                Node::Leaf { .. } => {
                    assert!(t.node_indices(node).len() <= 4);
                    for &i in t.node_indices(node) {
                        seen[i] += 1;
                    }
                }
                Node::Split {
                    axis, value, left, right, ..
                } => {
                    for &i in t.node_indices(&t.nodes()[*left]) {
                        assert!(cloud.point(i)[*axis] <= *value);
                    }
                    for &i in t.node_indices(&t.nodes()[*right]) {
                        assert!(cloud.point(i)[*axis] >= *value);
                    }
                }
            }
        }
        assert!(seen.iter().all(|&c| c == 1));
        assert_eq!(t, KdTree::with_leaf_size(&cloud, 4));
    }

    #[test]
    fn knn_small_example() {
        let cloud = line(&[0.0, 1.0, 2.0, 10.0]);
        let t = KdTree::build(&cloud);
        assert_eq!(t.knn(0, 2).unwrap(), vec![1, 2]);
        assert_eq!(t.knn(0, 3).unwrap(), vec![1, 2, 3]);
        assert!(matches!(t.knn(0, 4), Err(Error::TooManyNeighbors { k: 4, points: 4 })));
    }

    #[test]
    fn ties_break_by_index() {
        // 1 and 3 are both at distance 1 from point 0; 2 and 4 at distance 2
        let cloud = PointCloud::new(
            "t",
            vec![
                [0.0, 0.0, 0.0],
                [1.0, 0.0, 0.0],
                [0.0, 2.0, 0.0],
                [-1.0, 0.0, 0.0],
                [0.0, 0.0, -2.0],
            ],
        )
        .unwrap();
        for leaf in [1, 2, 16] {
            let t = KdTree::with_leaf_size(&cloud, leaf);
            assert_eq!(t.knn(0, 3).unwrap(), vec![1, 3, 2]);
        }
    }

    #[test]
    fn matches_brute_force_on_random_cloud() {
        let mut rng = rng::stream(42, Domain::Synth, 0);
        let pts: Vec<Point3> = (0..100).map(|_| [rng.gen(), rng.gen(), rng.gen()]).collect();
        let cloud = PointCloud::new("r", pts).unwrap();
        let t = KdTree::build(&cloud);
        for q in 0..cloud.len() {
            assert_eq!(t.knn(q, 20).unwrap(), brute_knn(&cloud, q, 20));
            let all = t.knn(q, cloud.len() - 1).unwrap();
            let mut sorted = all.clone();
            sorted.sort();
            assert_eq!(sorted, (0..cloud.len()).filter(|&i| i != q).collect::<Vec<_>>());
        }
    }

    #[test]
    fn grid_with_many_ties_matches_brute_force() {
        let mut pts = Vec::new();
        for x in 0..6 {
            for y in 0..6 {
                for z in 0..3 {
                    pts.push([x as f64, y as f64, z as f64]);
                }
            }
        }
        let cloud = PointCloud::new("g", pts).unwrap();
        let t = KdTree::with_leaf_size(&cloud, 3);
        for q in 0..cloud.len() {
            for k in [1, 6, 20] {
                assert_eq!(t.knn(q, k).unwrap(), brute_knn(&cloud, q, k));
            }
        }
    }
}
