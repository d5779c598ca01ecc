//! Exact k-d tree search with deterministic `(distance, index)` ordering.

use serde::{Deserialize, Serialize};

use super::PointCloud;
use crate::error::{Error, Result};

const LEAF_SIZE: usize = 8;

#[derive(Debug, Clone)]
enum Node {
    Leaf { start: usize, end: usize },
    Split { dim: usize, value: f64, left: usize, right: usize },
}

/// A static k-d tree over `D`-dimensional points.
///
/// All queries are exact; equal distances are ordered by ascending index.
#[derive(Debug, Clone)]
pub struct KdTree<const D: usize> {
    points: Vec<[f64; D]>,
    order: Vec<usize>,
    nodes: Vec<Node>,
}

impl<const D: usize> KdTree<D> {
    pub fn new(points: Vec<[f64; D]>) -> Self {
        let mut tree = Self {
            order: (0..points.len()).collect(),
            points,
            nodes: Vec::new(),
        };
        if !tree.points.is_empty() {
            tree.build(0, tree.points.len());
        }
        tree
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    fn build(&mut self, start: usize, end: usize) -> usize {
        let id = self.nodes.len();
        if end - start <= LEAF_SIZE {
            self.nodes.push(Node::Leaf { start, end });
            return id;
        }
        let mut dim = 0;
        let mut best = f64::NEG_INFINITY;
        for d in 0..D {
            let (lo, hi) = self.order[start..end].iter().fold(
                (f64::INFINITY, f64::NEG_INFINITY),
                |(lo, hi), &i| (lo.min(self.points[i][d]), hi.max(self.points[i][d])),
            );
            if hi - lo > best {
                best = hi - lo;
                dim = d;
            }
        }
        let mid = start + (end - start) / 2;
        let points = &self.points;
        self.order[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
            points[a][dim].total_cmp(&points[b][dim]).then(a.cmp(&b))
        });
        let value = self.points[self.order[mid]][dim];
        self.nodes.push(Node::Leaf { start: 0, end: 0 });
        let left = self.build(start, mid);
        let right = self.build(mid, end);
        self.nodes[id] = Node::Split { dim, value, left, right };
        id
    }

    fn dist2(a: &[f64; D], b: &[f64; D]) -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
    }

    /// Up to `k` nearest points with squared distance `<= max_dist2`, sorted by
    /// `(squared distance, index)`.
    pub fn knn_within(&self, query: &[f64; D], k: usize, max_dist2: f64) -> Vec<(usize, f64)> {
        let mut best: Vec<(f64, usize)> = Vec::with_capacity(k.min(64));
        if k == 0 || self.nodes.is_empty() {
            return Vec::new();
        }
        self.knn_rec(0, query, k, max_dist2, &mut best);
        best.into_iter().map(|(d, i)| (i, d)).collect()
    }

    pub fn knn(&self, query: &[f64; D], k: usize) -> Vec<(usize, f64)> {
        self.knn_within(query, k, f64::INFINITY)
    }

    /// Nearest point as `(index, squared distance)`.
    pub fn nearest(&self, query: &[f64; D]) -> Option<(usize, f64)> {
        self.knn(query, 1).into_iter().next()
    }

    /// Every point with squared distance `<= max_dist2`, sorted by `(distance, index)`.
    pub fn within(&self, query: &[f64; D], max_dist2: f64) -> Vec<(usize, f64)> {
        self.knn_within(query, usize::MAX, max_dist2)
    }

    fn bound(best: &[(f64, usize)], k: usize, max_dist2: f64) -> f64 {
        if best.len() == k {
            best[k - 1].0
        } else {
            max_dist2
        }
    }

    fn knn_rec(&self, node: usize, q: &[f64; D], k: usize, max_d2: f64, best: &mut Vec<(f64, usize)>) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for &i in &self.order[start..end] {
                    let d = Self::dist2(q, &self.points[i]);
                    if d > max_d2 {
                        continue;
                    }
                    let key = (d, i);
                    if best.len() == k {
                        let worst = best[k - 1];
                        if (key.0, key.1) >= (worst.0, worst.1) {
                            continue;
                        }
                        best.pop();
                    }
                    let pos = best.partition_point(|e| (e.0, e.1) < (key.0, key.1));
                    best.insert(pos, key);
                }
            }
            Node::Split { dim, value, left, right } => {
                let diff = q[dim] - value;
                let (near, far) = if diff < 0.0 { (left, right) } else { (right, left) };
                self.knn_rec(near, q, k, max_d2, best);
                // Equality is not pruned: a tied point with a lower index may live there.
                if diff * diff <= Self::bound(best, k, max_d2) {
                    self.knn_rec(far, q, k, max_d2, best);
                }
            }
        }
    }
}

impl KdTree<3> {
    pub fn from_cloud(cloud: &PointCloud) -> Self {
        Self::new(cloud.iter().map(|p| [p.x, p.y, p.z]).collect())
    }
}

/// At most `k` neighbors within `radius`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NeighborhoodSpec {
    pub k: usize,
    pub radius: f64,
}

impl NeighborhoodSpec {
    pub fn new(k: usize, radius: f64) -> Result<Self> {
        let spec = Self { k, radius };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || !(self.radius > 0.0) || !self.radius.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "neighborhood needs k >= 1 and radius > 0, got k={} radius={}",
                self.k, self.radius
            )));
        }
        Ok(())
    }
}

/// Per-point neighbor indices, each list sorted by ascending distance.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NeighborLists {
    pub lists: Vec<Vec<usize>>,
}

impl NeighborLists {
    pub fn len(&self) -> usize {
        self.lists.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lists.is_empty()
    }

    pub fn get(&self, i: usize) -> &[usize] {
        &self.lists[i]
    }
}

/// For each point, up to `spec.k` nearest *other* points with distance
/// `<= spec.radius`, nearest first, ties by lower index.
pub fn neighborhood_query(p: &PointCloud, spec: &NeighborhoodSpec) -> NeighborLists {
    let tree = KdTree::from_cloud(p);
    neighborhood_query_with(&tree, p, spec)
}

pub(crate) fn neighborhood_query_with(
    tree: &KdTree<3>,
    p: &PointCloud,
    spec: &NeighborhoodSpec,
) -> NeighborLists {
    let r2 = spec.radius * spec.radius;
    let lists = p
        .iter()
        .enumerate()
        .map(|(i, q)| {
            let mut hits = tree.knn_within(&[q.x, q.y, q.z], spec.k.saturating_add(1), r2);
            hits.retain(|(j, _)| *j != i);
            hits.truncate(spec.k);
            hits.into_iter().map(|(j, _)| j).collect()
        })
        .collect();
    NeighborLists { lists }
}
