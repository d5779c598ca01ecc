//! Classical clustering baselines: DBSCAN and Ward-linkage agglomeration.
//!
//! Features are row-major `N×D` slices. Use [`point_features`] to build
//! them from coordinates, flow or both.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::KdTree;
use crate::scene::ScenePair;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureSpace {
    #[default]
    Xyz,
    Flow,
    Both,
}

impl FeatureSpace {
    pub fn dim(self) -> usize {
        match self {
            FeatureSpace::Both => 6,
            _ => 3,
        }
    }
}

/// Row-major features of frame `t`.
pub fn point_features(scene: &ScenePair, space: FeatureSpace) -> Vec<f64> {
    let mut out = Vec::with_capacity(scene.num_points() * space.dim());
    for (p, m) in scene.frame_t.iter().zip(scene.flow.vectors()) {
        match space {
            FeatureSpace::Xyz => out.extend([p.x, p.y, p.z]),
            FeatureSpace::Flow => out.extend([m.x, m.y, m.z]),
            FeatureSpace::Both => out.extend([p.x, p.y, p.z, m.x, m.y, m.z]),
        }
    }
    out
}

fn rows(features: &[f64], dim: usize) -> Result<usize> {
    if dim == 0 || features.len() % dim != 0 {
        return Err(Error::DimensionMismatch {
            context: "feature matrix",
            expected: dim * (features.len() / dim.max(1)),
            actual: features.len(),
        });
    }
    Ok(features.len() / dim)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DbscanConfig {
    pub eps: f64,
    /// Neighbors within `eps`, the point itself included, that make a core point.
    pub min_points: usize,
}

impl Default for DbscanConfig {
    fn default() -> Self {
        Self {
            eps: 0.05,
            min_points: 5,
        }
    }
}

impl DbscanConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eps > 0.0) || !self.eps.is_finite() || self.min_points == 0 {
            return Err(Error::InvalidConfig("dbscan needs eps > 0 and min_points >= 1".into()));
        }
        Ok(())
    }
}

/// Density clustering. Noise points get `-1`; clusters are numbered in order
/// of their lowest-index core point.
pub fn dbscan(features: &[f64], dim: usize, cfg: &DbscanConfig) -> Result<Vec<i64>> {
    cfg.validate()?;
    let n = rows(features, dim)?;
    let neighbors = region_queries(features, dim, n, cfg.eps);
    Ok(expand_clusters(&neighbors, cfg.min_points))
}

fn region_queries(features: &[f64], dim: usize, n: usize, eps: f64) -> Vec<Vec<usize>> {
    let eps2 = eps * eps;
    macro_rules! with_tree {
        ($d:literal) => {{
            let tree = KdTree::<$d>::new(
                (0..n)
                    .map(|i| std::array::from_fn(|c| features[i * $d + c]))
                    .collect(),
            );
            (0..n)
                .map(|i| {
                    let q: [f64; $d] = std::array::from_fn(|c| features[i * $d + c]);
                    let mut v: Vec<usize> = tree.within(&q, eps2).into_iter().map(|(j, _)| j).collect();
                    v.sort_unstable();
                    v
                })
                .collect()
        }};
    }
    match dim {
        3 => with_tree!(3),
        6 => with_tree!(6),
        _ => (0..n)
            .map(|i| {
                (0..n)
                    .filter(|&j| sq_dist(features, dim, i, j) <= eps2)
                    .collect()
            })
            .collect(),
    }
}

fn expand_clusters(neighbors: &[Vec<usize>], min_points: usize) -> Vec<i64> {
    let n = neighbors.len();
    let mut labels = vec![-1i64; n];
    let mut visited = vec![false; n];
    let mut next = 0i64;
    for i in 0..n {
        if visited[i] || neighbors[i].len() < min_points {
            continue;
        }
        let mut queue = std::collections::VecDeque::from([i]);
        visited[i] = true;
        labels[i] = next;
        while let Some(p) = queue.pop_front() {
            if neighbors[p].len() < min_points {
                continue;
            }
            for &q in &neighbors[p] {
                if labels[q] < 0 {
                    labels[q] = next;
                }
                if !visited[q] && neighbors[q].len() >= min_points {
                    visited[q] = true;
                    queue.push_back(q);
                }
            }
        }
        next += 1;
    }
    labels
}

fn sq_dist(f: &[f64], dim: usize, i: usize, j: usize) -> f64 {
    (0..dim).map(|c| (f[i * dim + c] - f[j * dim + c]).powi(2)).sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WardConfig {
    TargetClusters(usize),
    /// Stop before any merge whose Ward distance exceeds this value.
    MergeDistanceThreshold(f64),
}

impl Default for WardConfig {
    fn default() -> Self {
        WardConfig::TargetClusters(8)
    }
}

/// One agglomeration step: clusters `a < b` (by representative index)
/// merge at Ward distance `distance`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Merge {
    pub a: usize,
    pub b: usize,
    pub distance: f64,
}

/// Ward agglomerative clustering; labels are numbered by first occurrence.
pub fn ward_linkage(features: &[f64], dim: usize, cfg: &WardConfig) -> Result<Vec<i64>> {
    Ok(ward_with_merges(features, dim, cfg)?.0)
}

/// Labels plus the merge sequence. Distances are `sqrt(2·Δ)` where `Δ` is
/// the increase in within-cluster sum of squares, updated by the
/// Lance–Williams recurrence. Ties go to the lowest `(a, b)` pair.
pub fn ward_with_merges(
    features: &[f64],
    dim: usize,
    cfg: &WardConfig,
) -> Result<(Vec<i64>, Vec<Merge>)> {
    let n = rows(features, dim)?;
    let target = match *cfg {
        WardConfig::TargetClusters(t) => {
            if t == 0 || t > n.max(1) {
                return Err(Error::InvalidConfig(format!(
                    "target_clusters {t} must be in 1..={n}"
                )));
            }
            t
        }
        WardConfig::MergeDistanceThreshold(d) => {
            if !(d > 0.0) {
                return Err(Error::InvalidConfig("merge distance threshold must be > 0".into()));
            }
            1
        }
    };
    if n == 0 {
        return Ok((Vec::new(), Vec::new()));
    }

    // Squared Ward distances on the upper triangle; d(i,j) for singletons is ‖x_i − x_j‖².
    let mut d = vec![0.0; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let v = sq_dist(features, dim, i, j);
            d[i * n + j] = v;
            d[j * n + i] = v;
        }
    }
    let mut size = vec![1usize; n];
    let mut active = vec![true; n];
    let mut parent: Vec<usize> = (0..n).collect();
    let mut merges = Vec::new();
    let mut clusters = n;

    while clusters > target {
        let mut best: Option<(usize, usize, f64)> = None;
        for i in 0..n {
            if !active[i] {
                continue;
            }
            for j in i + 1..n {
                if active[j] && best.is_none_or(|(_, _, b)| d[i * n + j] < b) {
                    best = Some((i, j, d[i * n + j]));
                }
            }
        }
        let (a, b, dist2) = best.expect("two active clusters");
        let distance = dist2.max(0.0).sqrt();
        if let WardConfig::MergeDistanceThreshold(t) = *cfg {
            if distance > t {
                break;
            }
        }
        let (na, nb) = (size[a] as f64, size[b] as f64);
        for k in 0..n {
            if !active[k] || k == a || k == b {
                continue;
            }
            let nk = size[k] as f64;
            let v = ((na + nk) * d[a * n + k] + (nb + nk) * d[b * n + k] - nk * dist2) / (na + nb + nk);
            d[a * n + k] = v;
            d[k * n + a] = v;
        }
        active[b] = false;
        size[a] += size[b];
        parent[b] = a;
        clusters -= 1;
        merges.push(Merge { a, b, distance });
    }

    let root = |mut i: usize| {
        while parent[i] != i {
            i = parent[i];
        }
        i
    };
    let mut ids = std::collections::HashMap::new();
    let labels = (0..n)
        .map(|i| {
            let next = ids.len() as i64;
            *ids.entry(root(i)).or_insert(next)
        })
        .collect();
    Ok((labels, merges))
}
