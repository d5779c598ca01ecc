//! Cross-frame mask transport and object-aware ICP flow refinement.

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::geometry::{KdTree, PointCloud, RigidTransform, Vec3};
use crate::losses::{fit_slots, match_masks};
use crate::masks::SoftSegmentation;
use crate::scene::{SceneFlow, ScenePair};

/// Gives every frame-`t+1` point the mask row of its nearest warped frame-`t` point.
pub fn transport_masks(
    p_warped: &PointCloud,
    seg_t: &SoftSegmentation,
    p_next: &PointCloud,
) -> Result<SoftSegmentation> {
    check_len("transported masks", p_warped.len(), seg_t.num_points())?;
    let tree = KdTree::from_cloud(p_warped);
    let index: Vec<usize> = p_next
        .iter()
        .map(|q| tree.nearest(&[q.x, q.y, q.z]).expect("non-empty cloud").0)
        .collect();
    Ok(seg_t.gather_rows(&index))
}

/// Reorders the slots of `seg_t1` so that slot `k` is the same object as in `seg_t`.
pub fn align_frame_masks(
    scene: &ScenePair,
    seg_t: &SoftSegmentation,
    seg_t1: &SoftSegmentation,
) -> Result<SoftSegmentation> {
    check_len("frame t+1 masks", scene.frame_t1.len(), seg_t1.num_points())?;
    let transported = transport_masks(&scene.warped(), seg_t, &scene.frame_t1)?;
    match_masks(&transported, seg_t1)?.reorder(seg_t1)
}

/// Correspondence temperature.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum Temperature {
    Absolute(f64),
    /// Multiple of the median nearest-neighbor spacing of frame `t+1`.
    Relative(f64),
}

impl Temperature {
    pub fn resolve(&self, p_next: &PointCloud) -> f64 {
        match *self {
            Temperature::Absolute(t) => t,
            Temperature::Relative(f) => f * median_spacing(p_next),
        }
    }
}

/// Median distance from each point to its nearest other point.
pub fn median_spacing(p: &PointCloud) -> f64 {
    if p.len() < 2 {
        return 1.0;
    }
    let tree = KdTree::from_cloud(p);
    let mut d: Vec<f64> = p
        .iter()
        .map(|q| tree.knn(&[q.x, q.y, q.z], 2)[1].1.sqrt())
        .collect();
    d.sort_by(f64::total_cmp);
    let m = d[d.len() / 2];
    if m > 0.0 {
        m
    } else {
        1.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IcpConfig {
    pub iterations: usize,
    pub temperature: Temperature,
    pub correspondence_k: usize,
    /// Score every frame-`t+1` point instead of the `correspondence_k` nearest.
    pub dense: bool,
    /// When false, each iteration only re-fits the per-object motions.
    pub correspondence_update: bool,
}

impl Default for IcpConfig {
    fn default() -> Self {
        Self {
            iterations: 20,
            temperature: Temperature::Relative(0.05),
            correspondence_k: 32,
            dense: false,
            correspondence_update: true,
        }
    }
}

impl IcpConfig {
    pub fn with_iterations(iterations: usize) -> Self {
        Self {
            iterations,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let t = match self.temperature {
            Temperature::Absolute(t) | Temperature::Relative(t) => t,
        };
        if self.iterations == 0 || self.correspondence_k == 0 || !(t > 0.0) || !t.is_finite() {
            return Err(Error::InvalidConfig(
                "icp needs iterations >= 1, correspondence_k >= 1 and temperature > 0".into(),
            ));
        }
        Ok(())
    }
}

/// Sparse soft correspondences from frame-`t` rows to frame-`t+1` columns.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrespondenceScores {
    pub rows: Vec<Vec<(usize, f64)>>,
}

impl CorrespondenceScores {
    /// `C_ij = exp(−(δ_ij − min_j δ_ij)/τ) · Σ_k o^t_ik o^{t+1}_jk` with
    /// `δ_ij = ‖p_i + m_i − q_j‖`, over the candidate set of each row.
    pub fn build(
        p_t: &PointCloud,
        flow: &[Vec3],
        p_next: &PointCloud,
        tree: &KdTree<3>,
        seg_t: &SoftSegmentation,
        seg_t1: &SoftSegmentation,
        tau: f64,
        candidates: Option<usize>,
    ) -> Self {
        let k = seg_t.num_slots();
        let rows = p_t
            .iter()
            .zip(flow)
            .enumerate()
            .map(|(i, (p, m))| {
                let q = p + m;
                let cand: Vec<(usize, f64)> = match candidates {
                    Some(c) => tree
                        .knn(&[q.x, q.y, q.z], c)
                        .into_iter()
                        .map(|(j, d2)| (j, d2.sqrt()))
                        .collect(),
                    None => p_next.iter().enumerate().map(|(j, x)| (j, (q - x).norm())).collect(),
                };
                let dmin = cand.iter().map(|c| c.1).fold(f64::INFINITY, f64::min);
                let oi = seg_t.row(i);
                cand.into_iter()
                    .filter_map(|(j, d)| {
                        let oj = seg_t1.row(j);
                        let consistency: f64 = (0..k).map(|s| oi[s] * oj[s]).sum();
                        let c = (-(d - dmin) / tau).exp() * consistency;
                        (c > 0.0).then_some((j, c))
                    })
                    .collect()
            })
            .collect();
        Self { rows }
    }
}

/// One pass of per-slot Kabsch: `M = Σ_k O_k·(T_k∘P − P)`.
pub fn rigidify_flow(p: &PointCloud, flow: &SceneFlow, seg: &SoftSegmentation) -> Result<SceneFlow> {
    check_len("rigidify flow", p.len(), flow.len())?;
    check_len("rigidify masks", p.len(), seg.num_points())?;
    let (vectors, _) = rigidify(p.points(), flow.vectors(), seg)?;
    SceneFlow::new(vectors)
}

fn rigidify(
    src: &[Vec3],
    flow: &[Vec3],
    seg: &SoftSegmentation,
) -> Result<(Vec<Vec3>, Vec<RigidTransform>)> {
    let dst: Vec<Vec3> = src.iter().zip(flow).map(|(p, m)| p + m).collect();
    let transforms: Vec<RigidTransform> = fit_slots(src, &dst, seg)?
        .into_iter()
        .map(|f| f.map_or_else(RigidTransform::identity, |f| f.transform))
        .collect();
    let vectors = src
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let row = seg.row(i);
            transforms
                .iter()
                .zip(row)
                .map(|(t, o)| *o * (t.apply(p) - p))
                .sum()
        })
        .collect();
    Ok((vectors, transforms))
}

/// Iteratively refines the flow of `scene` with mask-filtered soft
/// correspondences followed by per-object rigid re-fitting. The result is
/// always a mask blend of `K` rigid motions.
pub fn object_aware_icp(
    scene: &ScenePair,
    seg_t: &SoftSegmentation,
    seg_t1: &SoftSegmentation,
    cfg: &IcpConfig,
) -> Result<SceneFlow> {
    cfg.validate()?;
    scene.validate()?;
    check_len("frame t masks", scene.frame_t.len(), seg_t.num_points())?;
    check_len("frame t+1 masks", scene.frame_t1.len(), seg_t1.num_points())?;
    if seg_t.num_slots() != seg_t1.num_slots() {
        return Err(Error::DimensionMismatch {
            context: "icp mask slots",
            expected: seg_t.num_slots(),
            actual: seg_t1.num_slots(),
        });
    }
    let p_t = &scene.frame_t;
    let p_next = &scene.frame_t1;
    let tree = KdTree::from_cloud(p_next);
    let tau = cfg.temperature.resolve(p_next);
    let candidates = (!cfg.dense).then_some(cfg.correspondence_k);
    let mut flow = scene.flow.vectors().to_vec();

    for _ in 0..cfg.iterations {
        if cfg.correspondence_update {
            let scores =
                CorrespondenceScores::build(p_t, &flow, p_next, &tree, seg_t, seg_t1, tau, candidates);
            for (i, row) in scores.rows.iter().enumerate() {
                let total: f64 = row.iter().map(|(_, c)| c).sum();
                if total > 0.0 {
                    let target: Vec3 = row.iter().map(|(j, c)| *c * p_next[*j]).sum::<Vec3>() / total;
                    flow[i] = target - p_t[i];
                }
            }
        }
        flow = rigidify(p_t.points(), &flow, seg_t)?.0;
    }
    SceneFlow::new(flow)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cloud(n: usize, seed: u64) -> PointCloud {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        PointCloud::new(
            (0..n)
                .map(|_| Vec3::new(rng.random(), rng.random(), rng.random()))
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn transport_onto_itself_is_identity() {
        let p = cloud(50, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let seg = SoftSegmentation::random(50, 3, 1.0, &mut rng).unwrap();
        assert_eq!(transport_masks(&p, &seg, &p).unwrap(), seg);
    }

    #[test]
    fn transport_matches_exhaustive_scan() {
        let a = cloud(80, 3);
        let b = cloud(60, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let seg = SoftSegmentation::random(80, 4, 1.0, &mut rng).unwrap();
        let out = transport_masks(&a, &seg, &b).unwrap();
        for j in 0..b.len() {
            let mut best = 0;
            for i in 1..a.len() {
                if (a[i] - b[j]).norm_squared() < (a[best] - b[j]).norm_squared() {
                    best = i;
                }
            }
            assert_eq!(out.row(j), seg.row(best));
        }
    }

    #[test]
    fn rigid_flow_is_a_fixed_point() {
        let p = cloud(100, 6);
        let labels: Vec<usize> = (0..100).map(|i| usize::from(p[i].x > 0.5)).collect();
        let seg = SoftSegmentation::one_hot(&labels, 2).unwrap();
        let moves = [
            RigidTransform::from_translation(Vec3::new(0.02, 0.0, 0.01)),
            RigidTransform::rotation_about(
                &Vec3::new(0.75, 0.5, 0.5),
                RigidTransform::from_axis_angle(&Vec3::y(), 0.1).rotation,
                Vec3::new(-0.01, 0.0, 0.02),
            ),
        ];
        let flow: Vec<Vec3> = (0..100).map(|i| moves[labels[i]].apply(&p[i]) - p[i]).collect();
        let flow = SceneFlow::new(flow).unwrap();
        let out = rigidify_flow(&p, &flow, &seg).unwrap();
        for (a, b) in out.vectors().iter().zip(flow.vectors()) {
            assert!((a - b).norm() < 1e-9);
        }

        let next = p.displaced(flow.vectors()).unwrap();
        let scene = ScenePair::new("fixed", p.clone(), next, flow.clone()).unwrap();
        let refined = object_aware_icp(&scene, &seg, &seg, &IcpConfig::default()).unwrap();
        for (a, b) in refined.vectors().iter().zip(flow.vectors()) {
            assert!((a - b).norm() < 1e-6);
        }
    }

    #[test]
    fn single_object_translation_is_recovered() {
        let p = cloud(200, 8);
        let shift = Vec3::new(0.3, 0.0, 0.0);
        let next = PointCloud::new(p.iter().map(|x| x + shift).collect()).unwrap();
        let scene = ScenePair::new("shift", p.clone(), next, SceneFlow::zeros(200)).unwrap();
        let seg = SoftSegmentation::uniform(200, 1).unwrap();
        let cfg = IcpConfig {
            iterations: 50,
            temperature: Temperature::Absolute(0.01),
            dense: true,
            ..IcpConfig::default()
        };
        let out = object_aware_icp(&scene, &seg, &seg, &cfg).unwrap();
        for v in out.vectors() {
            assert!((v - shift).norm() < 1e-3, "{v:?}");
        }
    }

    #[test]
    fn translation_rigidify_gives_mean() {
        let p = cloud(30, 9);
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let flow: Vec<Vec3> = (0..30)
            .map(|_| Vec3::new(0.1, 0.0, 0.0) + Vec3::new(rng.random(), rng.random(), rng.random()) * 1e-3)
            .collect();
        let mean: Vec3 = flow.iter().sum::<Vec3>() / 30.0;
        let out = rigidify_flow(&p, &SceneFlow::new(flow).unwrap(), &SoftSegmentation::uniform(30, 1).unwrap())
            .unwrap();
        // a rotation may absorb part of the noise; the centroid moves by the mean
        let c = p.centroid();
        let moved: Vec3 = p.iter().zip(out.vectors()).map(|(x, m)| x + m).sum::<Vec3>() / 30.0;
        assert!((moved - c - mean).norm() < 1e-12);
    }
}
