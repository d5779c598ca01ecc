use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::geometry::{neighborhood_query, NeighborLists, NeighborhoodSpec, PointCloud};
use crate::masks::SoftSegmentation;
use crate::scene::SceneFlow;

/// Distance between two assignment rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Distance {
    #[default]
    L1,
    L2,
    /// `−Σ_k a_k ln b_k`, the first row acting as the target.
    CrossEntropy,
}

const CE_FLOOR: f64 = 1e-12;

impl Distance {
    /// `d(a, b)`, accumulating `∂d/∂a · scale` and `∂d/∂b · scale`.
    pub(crate) fn eval_acc(
        self,
        a: &[f64],
        b: &[f64],
        scale: f64,
        ga: &mut [f64],
        gb: &mut [f64],
    ) -> f64 {
        match self {
            Distance::L1 => {
                let mut d = 0.0;
                for s in 0..a.len() {
                    let diff = a[s] - b[s];
                    d += diff.abs();
                    let sg = if diff > 0.0 {
                        1.0
                    } else if diff < 0.0 {
                        -1.0
                    } else {
                        0.0
                    };
                    ga[s] += scale * sg;
                    gb[s] -= scale * sg;
                }
                d
            }
            Distance::L2 => {
                let d = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
                if d > 0.0 {
                    for s in 0..a.len() {
                        let g = scale * (a[s] - b[s]) / d;
                        ga[s] += g;
                        gb[s] -= g;
                    }
                }
                d
            }
            Distance::CrossEntropy => {
                let mut d = 0.0;
                for s in 0..a.len() {
                    let bb = b[s].max(CE_FLOOR);
                    d -= a[s] * bb.ln();
                    ga[s] -= scale * bb.ln();
                    if b[s] > CE_FLOOR {
                        gb[s] -= scale * a[s] / b[s];
                    }
                }
                d
            }
        }
    }

    pub fn eval(self, a: &[f64], b: &[f64]) -> f64 {
        let mut ga = vec![0.0; a.len()];
        let mut gb = vec![0.0; a.len()];
        self.eval_acc(a, b, 0.0, &mut ga, &mut gb)
    }
}

/// One neighborhood scale of the smoothness regularizer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmoothScale {
    pub neighborhood: NeighborhoodSpec,
    pub weight: f64,
}

/// Multi-scale smoothness settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmoothnessConfig {
    pub scales: Vec<SmoothScale>,
    pub distance: Distance,
    /// Temperature of the motion-similarity weighting; `None` gives the plain loss.
    #[serde(default)]
    pub motion_temperature: Option<f64>,
}

impl Default for SmoothnessConfig {
    /// `(k=8, r=0.04)·3.0 + (k=16, r=0.08)·1.0`, L1, sized for 512-point
    /// clouds in a room of unit extent.
    fn default() -> Self {
        Self::for_density(512)
    }
}

impl SmoothnessConfig {
    /// The two-scale scheme with radii `0.02` and `0.04` at 2048 points,
    /// scaled by the mean point spacing `sqrt(2048 / points)`.
    pub fn for_density(points: usize) -> Self {
        let f = (2048.0 / points.max(1) as f64).sqrt();
        Self::two_scale(8, 0.02 * f, 16, 0.04 * f)
    }

    /// Two scales weighted `3.0` and `1.0`, L1 distance.
    pub fn two_scale(k1: usize, r1: f64, k2: usize, r2: f64) -> Self {
        Self {
            scales: vec![
                SmoothScale {
                    neighborhood: NeighborhoodSpec { k: k1, radius: r1 },
                    weight: 3.0,
                },
                SmoothScale {
                    neighborhood: NeighborhoodSpec { k: k2, radius: r2 },
                    weight: 1.0,
                },
            ],
            distance: Distance::L1,
            motion_temperature: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.scales.is_empty() {
            return Err(Error::InvalidConfig("smoothness needs at least one scale".into()));
        }
        for s in &self.scales {
            s.neighborhood.validate()?;
            if !(s.weight > 0.0) || !s.weight.is_finite() {
                return Err(Error::InvalidConfig("smoothness scale weights must be positive".into()));
            }
        }
        if let Some(t) = self.motion_temperature {
            if !(t > 0.0) {
                return Err(Error::InvalidConfig("motion temperature must be positive".into()));
            }
        }
        Ok(())
    }

    /// Neighbor lists for every scale, in `scales` order.
    pub fn neighbors(&self, p: &PointCloud) -> Vec<NeighborLists> {
        let tree = crate::geometry::KdTree::from_cloud(p);
        self.scales
            .iter()
            .map(|s| crate::geometry::neighborhood_query_with(&tree, p, &s.neighborhood))
            .collect()
    }
}

/// Value and logit gradient of a loss.
#[derive(Debug, Clone)]
pub struct LossValue {
    pub value: f64,
    pub grad: Vec<f64>,
}

fn check_neighbors(n: usize, cfg: &SmoothnessConfig, neighbors: &[NeighborLists]) -> Result<()> {
    check_len("smoothness scales", cfg.scales.len(), neighbors.len())?;
    for lists in neighbors {
        check_len("neighbor lists", n, lists.len())?;
        if lists.lists.iter().flatten().any(|&j| j >= n) {
            return Err(Error::InvalidConfig("neighbor index out of range".into()));
        }
    }
    Ok(())
}

/// Per-neighbor weights of point `i`; must sum to one over a nonempty list.
fn smooth_masks<F>(
    seg: &SoftSegmentation,
    cfg: &SmoothnessConfig,
    neighbors: &[NeighborLists],
    mut neighbor_weights: F,
) -> (f64, Vec<f64>)
where
    F: FnMut(usize, &[usize], &mut Vec<f64>),
{
    let n = seg.num_points();
    let k = seg.num_slots();
    let inv_n = 1.0 / n as f64;
    let mut grad = vec![0.0; n * k];
    let mut value = 0.0;
    let mut weights = Vec::new();
    let mut ga = vec![0.0; k];
    let mut gb = vec![0.0; k];
    for (scale, lists) in cfg.scales.iter().zip(neighbors) {
        let mut scale_sum = 0.0;
        for i in 0..n {
            let list = lists.get(i);
            if list.is_empty() {
                continue;
            }
            neighbor_weights(i, list, &mut weights);
            for (&j, &w) in list.iter().zip(&weights) {
                let c = scale.weight * inv_n * w;
                ga.iter_mut().for_each(|g| *g = 0.0);
                gb.iter_mut().for_each(|g| *g = 0.0);
                let d = cfg.distance.eval_acc(seg.row(i), seg.row(j), c, &mut ga, &mut gb);
                scale_sum += w * d;
                for s in 0..k {
                    grad[i * k + s] += ga[s];
                    grad[j * k + s] += gb[s];
                }
            }
        }
        value += scale.weight * inv_n * scale_sum;
    }
    (value, grad)
}

/// Weighted sum over scales of the mean (over points) of the mean (over
/// neighbors) assignment distance. Points without neighbors contribute zero.
pub fn smooth_loss(
    p: &PointCloud,
    seg: &SoftSegmentation,
    cfg: &SmoothnessConfig,
    neighbors: &[NeighborLists],
) -> Result<LossValue> {
    check_len("smooth loss masks", p.len(), seg.num_points())?;
    check_neighbors(p.len(), cfg, neighbors)?;
    let (value, g) = smooth_masks(seg, cfg, neighbors, |_, list, w| {
        w.clear();
        w.resize(list.len(), 1.0 / list.len() as f64);
    });
    Ok(LossValue {
        value,
        grad: seg.softmax_backward(&g),
    })
}

/// Smoothness with each neighbor weighted by `exp(−‖m_i − m_j‖/τ)`,
/// normalized per point so the weights of a neighborhood sum to one.
/// Equal flows reduce it to [`smooth_loss`].
pub fn weighted_smooth_loss(
    p: &PointCloud,
    flow: &SceneFlow,
    seg: &SoftSegmentation,
    cfg: &SmoothnessConfig,
    tau: f64,
    neighbors: &[NeighborLists],
) -> Result<LossValue> {
    check_len("weighted smooth loss masks", p.len(), seg.num_points())?;
    check_len("weighted smooth loss flow", p.len(), flow.len())?;
    check_neighbors(p.len(), cfg, neighbors)?;
    if !(tau > 0.0) {
        return Err(Error::InvalidConfig("temperature must be positive".into()));
    }
    let m = flow.vectors();
    let (value, g) = smooth_masks(seg, cfg, neighbors, |i, list, w| {
        w.clear();
        w.extend(list.iter().map(|&j| (m[i] - m[j]).norm()));
        // shift by the smallest distance; the normalized ratio is unchanged
        let dmin = w.iter().copied().fold(f64::INFINITY, f64::min);
        let mut e = 0.0;
        for x in w.iter_mut() {
            *x = (-(*x - dmin) / tau).exp();
            e += *x;
        }
        for x in w.iter_mut() {
            *x /= e;
        }
    });
    Ok(LossValue {
        value,
        grad: seg.softmax_backward(&g),
    })
}

/// Neighbor lists for a single scale.
pub fn scale_neighbors(p: &PointCloud, spec: &NeighborhoodSpec) -> NeighborLists {
    neighborhood_query(p, spec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Vec3;

    fn single_scale(k: usize, r: f64) -> SmoothnessConfig {
        SmoothnessConfig {
            scales: vec![SmoothScale {
                neighborhood: NeighborhoodSpec { k, radius: r },
                weight: 1.0,
            }],
            distance: Distance::L1,
            motion_temperature: None,
        }
    }

    #[test]
    fn identical_rows_give_zero() {
        let p = PointCloud::from_arrays(&[[0.0; 3], [0.01, 0.0, 0.0], [0.0, 0.01, 0.0]]).unwrap();
        let seg = SoftSegmentation::from_logits(3, 2, vec![0.3, -0.1, 0.3, -0.1, 0.3, -0.1]).unwrap();
        let cfg = SmoothnessConfig::default();
        let nb = cfg.neighbors(&p);
        assert_eq!(smooth_loss(&p, &seg, &cfg, &nb).unwrap().value, 0.0);
    }

    #[test]
    fn separated_uniform_clusters_give_zero() {
        let p = PointCloud::from_arrays(&[
            [0.0; 3],
            [0.01, 0.0, 0.0],
            [5.0, 0.0, 0.0],
            [5.01, 0.0, 0.0],
        ])
        .unwrap();
        let seg = SoftSegmentation::one_hot(&[0, 0, 1, 1], 2).unwrap();
        let cfg = SmoothnessConfig::default();
        let nb = cfg.neighbors(&p);
        assert_eq!(smooth_loss(&p, &seg, &cfg, &nb).unwrap().value, 0.0);
    }

    #[test]
    fn two_disagreeing_points() {
        // each point: d = |1-0| + |0-1| = 2, H = 1, mean over points = 2
        let p = PointCloud::from_arrays(&[[0.0; 3], [0.5, 0.0, 0.0]]).unwrap();
        let seg = SoftSegmentation::one_hot(&[0, 1], 2).unwrap();
        let cfg = single_scale(1, 1.0);
        let nb = cfg.neighbors(&p);
        let v = smooth_loss(&p, &seg, &cfg, &nb).unwrap().value;
        assert!((v - 2.0).abs() < 1e-15);
    }

    #[test]
    fn isolated_points_contribute_zero() {
        let p = PointCloud::from_arrays(&[[0.0; 3], [3.0, 0.0, 0.0]]).unwrap();
        let seg = SoftSegmentation::one_hot(&[0, 1], 2).unwrap();
        let cfg = single_scale(4, 1.0);
        let nb = cfg.neighbors(&p);
        assert_eq!(smooth_loss(&p, &seg, &cfg, &nb).unwrap().value, 0.0);
    }

    #[test]
    fn weighted_equals_plain_under_equal_flow() {
        let p = PointCloud::from_arrays(&[[0.0; 3], [0.1, 0.0, 0.0], [0.2, 0.0, 0.0], [0.1, 0.1, 0.0]])
            .unwrap();
        let seg =
            SoftSegmentation::from_logits(4, 2, vec![0.1, 0.9, -0.5, 0.2, 1.5, 0.3, 0.0, 0.0]).unwrap();
        let cfg = single_scale(3, 0.5);
        let nb = cfg.neighbors(&p);
        let flow = SceneFlow::new(vec![Vec3::new(0.3, -0.1, 0.2); 4]).unwrap();
        let a = smooth_loss(&p, &seg, &cfg, &nb).unwrap().value;
        let b = weighted_smooth_loss(&p, &flow, &seg, &cfg, 0.01, &nb).unwrap().value;
        assert!((a - b).abs() < 1e-9);
    }

    #[test]
    fn weighted_hand_evaluation_on_a_line() {
        // points 0 - 1 - 2 spaced 1 apart, radius 1.5, k = 2
        // neighbors: 0:[1, 2]? no, 2 is at distance 2 > 1.5 -> 0:[1], 1:[0, 2], 2:[1]
        let p = PointCloud::from_arrays(&[[0.0; 3], [1.0, 0.0, 0.0], [2.0, 0.0, 0.0]]).unwrap();
        let seg = SoftSegmentation::from_masks(3, 2, vec![1.0, 0.0, 0.5, 0.5, 0.0, 1.0]).unwrap();
        let flow = SceneFlow::new(vec![
            Vec3::new(0.0, 0.0, 0.0),
            Vec3::new(0.01, 0.0, 0.0),
            Vec3::new(0.03, 0.0, 0.0),
        ])
        .unwrap();
        let cfg = single_scale(2, 1.5);
        let nb = cfg.neighbors(&p);
        let tau = 0.01;
        // d(0,1) = d(1,2) = 1.0 (L1)
        // point 0: single neighbor, weight 1 -> 1.0
        // point 1: motion gaps 0.01 (to 0) and 0.02 (to 2):
        //   w0 = e^-1 / (e^-1 + e^-2), w2 = e^-2 / (e^-1 + e^-2); both d = 1 -> 1.0
        // point 2: single neighbor -> 1.0
        // value = (1 + 1 + 1) / 3 = 1
        let v = weighted_smooth_loss(&p, &flow, &seg, &cfg, tau, &nb).unwrap().value;
        assert!((v - 1.0).abs() < 1e-12);

        // make the two distances differ: point 2 fully agrees with point 1
        let seg2 = SoftSegmentation::from_masks(3, 2, vec![1.0, 0.0, 0.5, 0.5, 0.5, 0.5]).unwrap();
        let e1 = (-1.0f64).exp();
        let e2 = (-2.0f64).exp();
        let want = (1.0 + e1 / (e1 + e2) * 1.0 + 0.0) / 3.0;
        let v2 = weighted_smooth_loss(&p, &flow, &seg2, &cfg, tau, &nb).unwrap().value;
        assert!((v2 - want).abs() < 1e-12, "{v2} vs {want}");
    }

    #[test]
    fn zero_disagreement_ignores_flow() {
        let p = PointCloud::from_arrays(&[[0.0; 3], [0.1, 0.0, 0.0]]).unwrap();
        let seg = SoftSegmentation::one_hot(&[1, 1], 2).unwrap();
        let flow = SceneFlow::new(vec![Vec3::zeros(), Vec3::new(5.0, 0.0, 0.0)]).unwrap();
        let cfg = single_scale(4, 1.0);
        let nb = cfg.neighbors(&p);
        assert_eq!(weighted_smooth_loss(&p, &flow, &seg, &cfg, 0.01, &nb).unwrap().value, 0.0);
    }
}
