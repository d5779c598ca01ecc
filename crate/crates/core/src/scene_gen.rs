//! Synthetic rooms of rigid primitive objects moving between frames.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{PointCloud, RigidTransform, Vec3};
use crate::optimizer::Interval;
use crate::scene::{SceneFlow, ScenePair};

/// Lowest allowed AABB `y`; tilted objects may dip slightly into the ground.
const GROUND_TOLERANCE: f64 = 0.1;
const ROOM_HEIGHT: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneGenConfig {
    /// Inclusive object count range.
    pub num_objects: (usize, usize),
    pub frames: usize,
    pub points_per_frame: usize,
    pub room_aspect: Interval,
    pub object_scale: Interval,
    pub step_rotation_deg: Interval,
    /// Probabilities of stepping about the world y, x and z axes.
    pub rotation_axis_probs: [f64; 3],
    pub step_translation: Interval,
    pub max_rejections: usize,
    pub seed: u64,
}

impl Default for SceneGenConfig {
    fn default() -> Self {
        Self {
            num_objects: (4, 8),
            frames: 4,
            points_per_frame: 512,
            room_aspect: Interval::new(0.6, 1.0),
            object_scale: Interval::new(0.2, 0.45),
            step_rotation_deg: Interval::new(-10.0, 10.0),
            rotation_axis_probs: [0.6, 0.2, 0.2],
            step_translation: Interval::new(-0.04, 0.04),
            max_rejections: 200_000,
            seed: 0,
        }
    }
}

impl SceneGenConfig {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.num_objects;
        if lo == 0 || lo > hi {
            return Err(Error::InvalidConfig(format!("object count range {lo}..{hi} is invalid")));
        }
        if self.frames < 2 || self.points_per_frame == 0 {
            return Err(Error::InvalidConfig("need >= 2 frames and >= 1 point".into()));
        }
        self.room_aspect.validate("room_aspect")?;
        self.object_scale.validate("object_scale")?;
        self.step_rotation_deg.validate("step_rotation_deg")?;
        self.step_translation.validate("step_translation")?;
        if !(self.room_aspect.lo > 0.0 && self.room_aspect.hi <= 1.0) || !(self.object_scale.lo > 0.0) {
            return Err(Error::InvalidConfig("room aspect must be in (0,1], scale > 0".into()));
        }
        let sum: f64 = self.rotation_axis_probs.iter().sum();
        if self.rotation_axis_probs.iter().any(|p| *p < 0.0) || (sum - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidConfig("rotation axis probabilities must sum to 1".into()));
        }
        Ok(())
    }
}

/// An axis-aligned box given by its minimum corner and extents.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
struct Cuboid {
    min: Vec3,
    size: Vec3,
}

impl Cuboid {
    fn area(&self) -> f64 {
        let s = self.size;
        2.0 * (s.x * s.y + s.y * s.z + s.x * s.z)
    }

    fn sample(&self, rng: &mut impl Rng) -> Vec3 {
        let s = self.size;
        let faces = [s.y * s.z, s.y * s.z, s.x * s.z, s.x * s.z, s.x * s.y, s.x * s.y];
        let face = pick_weighted(&faces, rng);
        let (u, v): (f64, f64) = (rng.random(), rng.random());
        let local = match face {
            0 => Vec3::new(0.0, u, v),
            1 => Vec3::new(1.0, u, v),
            2 => Vec3::new(u, 0.0, v),
            3 => Vec3::new(u, 1.0, v),
            4 => Vec3::new(u, v, 0.0),
            _ => Vec3::new(u, v, 1.0),
        };
        self.min + local.component_mul(&s)
    }
}

/// Primitive object in its local frame: resting on `y = 0`, centered in x–z.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Shape {
    Box { size: Vec3 },
    Cylinder { radius: f64, height: f64 },
    Sphere { radius: f64 },
    /// A flat slab with an upright slab on one end.
    LComposite { base: Vec3, upright: Vec3 },
}

impl Shape {
    fn random(scale: f64, rng: &mut impl Rng) -> Self {
        let kind = rng.random_range(0..4);
        let mut u = || rng.random_range(0.5..=1.0);
        match kind {
            0 => {
                let d = Vec3::new(u(), u(), u());
                Shape::Box { size: d / d.max() * scale }
            }
            1 => {
                let (r, h) = (u(), u());
                let m = (2.0 * r).max(h);
                Shape::Cylinder {
                    radius: r / m * scale,
                    height: h / m * scale,
                }
            }
            2 => Shape::Sphere { radius: scale / 2.0 },
            _ => {
                let depth = 0.5 * u() * scale + 0.2 * scale;
                Shape::LComposite {
                    base: Vec3::new(scale, 0.25 * scale, depth),
                    upright: Vec3::new(0.25 * scale, 0.75 * scale * u(), depth),
                }
            }
        }
    }

    fn cuboids(&self) -> Vec<Cuboid> {
        match self {
            Shape::LComposite { base, upright } => vec![
                Cuboid {
                    min: Vec3::new(-base.x / 2.0, 0.0, -base.z / 2.0),
                    size: *base,
                },
                Cuboid {
                    min: Vec3::new(-base.x / 2.0, base.y, -base.z / 2.0),
                    size: *upright,
                },
            ],
            _ => Vec::new(),
        }
    }

    pub fn area(&self) -> f64 {
        use std::f64::consts::PI;
        match self {
            Shape::Box { size } => Cuboid { min: Vec3::zeros(), size: *size }.area(),
            Shape::Cylinder { radius, height } => 2.0 * PI * radius * (radius + height),
            Shape::Sphere { radius } => 4.0 * PI * radius * radius,
            Shape::LComposite { .. } => self.cuboids().iter().map(Cuboid::area).sum(),
        }
    }

    /// Local bounding box `(min, max)`.
    pub fn bounds(&self) -> (Vec3, Vec3) {
        match self {
            Shape::Box { size } => (
                Vec3::new(-size.x / 2.0, 0.0, -size.z / 2.0),
                Vec3::new(size.x / 2.0, size.y, size.z / 2.0),
            ),
            Shape::Cylinder { radius, height } => (
                Vec3::new(-radius, 0.0, -radius),
                Vec3::new(*radius, *height, *radius),
            ),
            Shape::Sphere { radius } => (
                Vec3::new(-radius, 0.0, -radius),
                Vec3::new(*radius, 2.0 * radius, *radius),
            ),
            Shape::LComposite { base, upright } => (
                Vec3::new(-base.x / 2.0, 0.0, -base.z / 2.0),
                Vec3::new(base.x / 2.0, base.y + upright.y, base.z / 2.0),
            ),
        }
    }

    /// Area of the local bounding box projected on the ground.
    pub fn footprint(&self) -> f64 {
        let (lo, hi) = self.bounds();
        (hi.x - lo.x) * (hi.z - lo.z)
    }

    pub fn center(&self) -> Vec3 {
        let (lo, hi) = self.bounds();
        (lo + hi) / 2.0
    }

    fn sample(&self, rng: &mut impl Rng) -> Vec3 {
        use std::f64::consts::PI;
        match self {
            Shape::Box { size } => Cuboid {
                min: Vec3::new(-size.x / 2.0, 0.0, -size.z / 2.0),
                size: *size,
            }
            .sample(rng),
            Shape::Cylinder { radius, height } => {
                let side = 2.0 * PI * radius * height;
                let cap = PI * radius * radius;
                match pick_weighted(&[side, cap, cap], rng) {
                    0 => {
                        let a = rng.random_range(0.0..2.0 * PI);
                        Vec3::new(radius * a.cos(), rng.random::<f64>() * height, radius * a.sin())
                    }
                    face => {
                        let a = rng.random_range(0.0..2.0 * PI);
                        let r = radius * rng.random::<f64>().sqrt();
                        let y = if face == 1 { 0.0 } else { *height };
                        Vec3::new(r * a.cos(), y, r * a.sin())
                    }
                }
            }
            Shape::Sphere { radius } => {
                let d = loop {
                    let v = Vec3::new(
                        StandardNormal.sample(rng),
                        StandardNormal.sample(rng),
                        StandardNormal.sample(rng),
                    );
                    let n = v.norm();
                    if n > 1e-12 {
                        break v / n;
                    }
                };
                Vec3::new(0.0, *radius, 0.0) + d * *radius
            }
            Shape::LComposite { .. } => {
                let parts = self.cuboids();
                let areas: Vec<f64> = parts.iter().map(Cuboid::area).collect();
                parts[pick_weighted(&areas, rng)].sample(rng)
            }
        }
    }
}

fn pick_weighted(weights: &[f64], rng: &mut impl Rng) -> usize {
    let total: f64 = weights.iter().sum();
    let mut x = rng.random::<f64>() * total;
    for (i, w) in weights.iter().enumerate() {
        if x < *w {
            return i;
        }
        x -= w;
    }
    weights.len() - 1
}

/// Splits `total` proportionally to `weights` by largest remainder,
/// ties to the lower index.
pub fn allocate_points(total: usize, weights: &[f64]) -> Vec<usize> {
    let sum: f64 = weights.iter().sum();
    let quotas: Vec<f64> = weights.iter().map(|w| w / sum * total as f64).collect();
    let mut counts: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let mut rest = total - counts.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let (ra, rb) = (quotas[a] - quotas[a].floor(), quotas[b] - quotas[b].floor());
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &i in order.iter().cycle() {
        if rest == 0 {
            break;
        }
        counts[i] += 1;
        rest -= 1;
    }
    counts
}

/// A generated multi-frame scene with exact ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratedScene {
    pub frames: Vec<PointCloud>,
    pub labels: Vec<Vec<u32>>,
    /// `gt_flows[f]` moves frame `f` points with their objects to frame `f + 1`.
    pub gt_flows: Vec<SceneFlow>,
    /// `object_poses[f][k]` maps object `k`'s local frame to the world at frame `f`.
    pub object_poses: Vec<Vec<RigidTransform>>,
    pub shapes: Vec<Shape>,
    /// Floor extents along x and z.
    pub room: (f64, f64),
}

impl GeneratedScene {
    pub fn num_objects(&self) -> usize {
        self.shapes.len()
    }

    /// Motion of object `k` from frame `f` to frame `f + 1`.
    pub fn step_transform(&self, f: usize, k: usize) -> RigidTransform {
        self.object_poses[f + 1][k].compose(&self.object_poses[f][k].inverse())
    }

    /// Frames `f` and `f + 1` with ground-truth flow used as the input flow.
    pub fn pair(&self, id: impl Into<String>, f: usize) -> ScenePair {
        ScenePair {
            scene_id: id.into(),
            frame_t: self.frames[f].clone(),
            frame_t1: self.frames[f + 1].clone(),
            flow: self.gt_flows[f].clone(),
            gt_labels_t: Some(self.labels[f].clone()),
            gt_labels_t1: Some(self.labels[f + 1].clone()),
            gt_flow: Some(self.gt_flows[f].clone()),
        }
    }

    /// World AABB of object `k` at frame `f`.
    pub fn object_aabb(&self, f: usize, k: usize) -> (Vec3, Vec3) {
        world_aabb(&self.shapes[k], &self.object_poses[f][k])
    }
}

fn world_aabb(shape: &Shape, pose: &RigidTransform) -> (Vec3, Vec3) {
    let (lo, hi) = shape.bounds();
    let mut min = Vec3::repeat(f64::INFINITY);
    let mut max = Vec3::repeat(f64::NEG_INFINITY);
    for c in 0..8 {
        let corner = Vec3::new(
            if c & 1 == 0 { lo.x } else { hi.x },
            if c & 2 == 0 { lo.y } else { hi.y },
            if c & 4 == 0 { lo.z } else { hi.z },
        );
        let w = pose.apply(&corner);
        min = min.inf(&w);
        max = max.sup(&w);
    }
    (min, max)
}

fn aabbs_overlap(a: &(Vec3, Vec3), b: &(Vec3, Vec3)) -> bool {
    (0..3).all(|i| a.0[i] < b.1[i] && b.0[i] < a.1[i])
}

fn inside_room(b: &(Vec3, Vec3), room: (f64, f64)) -> bool {
    b.0.x >= 0.0
        && b.1.x <= room.0
        && b.0.z >= 0.0
        && b.1.z <= room.1
        && b.0.y >= -GROUND_TOLERANCE
        && b.1.y <= ROOM_HEIGHT
}

struct Rejections {
    count: usize,
    max: usize,
}

impl Rejections {
    fn reject(&mut self) -> Result<()> {
        self.count += 1;
        if self.count > self.max {
            Err(Error::GenerationFailed { rejections: self.count - 1 })
        } else {
            Ok(())
        }
    }
}

/// Consecutive rejections of one object after which the layout restarts.
const STALL: usize = 2000;

type Layout = (Vec<Shape>, Vec<Vec<RigidTransform>>);

/// One attempt at placing and moving every object; `None` on a stall.
fn layout(
    cfg: &SceneGenConfig,
    rng: &mut ChaCha8Rng,
    room: (f64, f64),
    count: usize,
    rejections: &mut Rejections,
) -> Result<Option<Layout>> {
    let mut shapes: Vec<Shape> = Vec::with_capacity(count);
    let mut poses: Vec<RigidTransform> = Vec::with_capacity(count);
    let mut boxes: Vec<(Vec3, Vec3)> = Vec::with_capacity(count);
    let mut stalled = 0;
    while shapes.len() < count {
        let shape = Shape::random(cfg.object_scale.sample(rng), rng);
        let yaw = rng.random_range(-180.0f64..=180.0).to_radians();
        let mut pose = RigidTransform::from_axis_angle(&Vec3::y(), yaw);
        pose.translation = Vec3::new(rng.random::<f64>() * room.0, 0.0, rng.random::<f64>() * room.1);
        let bb = world_aabb(&shape, &pose);
        if !inside_room(&bb, room) || boxes.iter().any(|o| aabbs_overlap(o, &bb)) {
            rejections.reject()?;
            stalled += 1;
            if stalled > STALL {
                return Ok(None);
            }
            continue;
        }
        stalled = 0;
        shapes.push(shape);
        poses.push(pose);
        boxes.push(bb);
    }

    let axes = [Vec3::y(), Vec3::x(), Vec3::z()];
    let mut object_poses = vec![poses];
    for _ in 1..cfg.frames {
        let prev = object_poses.last().expect("at least one frame").clone();
        let mut next = prev.clone();
        let mut next_boxes = boxes.clone();
        for k in 0..count {
            let mut stalled = 0;
            loop {
                let axis = axes[pick_weighted(&cfg.rotation_axis_probs, rng)];
                let angle = cfg.step_rotation_deg.sample(rng).to_radians();
                let t = Vec3::new(cfg.step_translation.sample(rng), 0.0, cfg.step_translation.sample(rng));
                let pivot = prev[k].apply(&shapes[k].center());
                let rot = RigidTransform::from_axis_angle(&axis, angle).rotation;
                let pose = RigidTransform::rotation_about(&pivot, rot, t).compose(&prev[k]);
                let bb = world_aabb(&shapes[k], &pose);
                let clash = next_boxes
                    .iter()
                    .enumerate()
                    .any(|(j, o)| j != k && aabbs_overlap(o, &bb));
                if inside_room(&bb, room) && !clash {
                    next[k] = pose;
                    next_boxes[k] = bb;
                    break;
                }
                rejections.reject()?;
                stalled += 1;
                if stalled > STALL {
                    return Ok(None);
                }
            }
        }
        boxes = next_boxes;
        object_poses.push(next);
    }
    Ok(Some((shapes, object_poses)))
}

/// Generates one scene; identical configs give identical scenes.
pub fn generate_scene(cfg: &SceneGenConfig) -> Result<GeneratedScene> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let aspect = cfg.room_aspect.sample(&mut rng);
    let room = if rng.random::<bool>() { (1.0, aspect) } else { (aspect, 1.0) };
    let count = rng.random_range(cfg.num_objects.0..=cfg.num_objects.1);
    let mut rejections = Rejections {
        count: 0,
        max: cfg.max_rejections,
    };

    let (shapes, object_poses) = loop {
        if let Some(found) = layout(cfg, &mut rng, room, count, &mut rejections)? {
            break found;
        }
    };

    let areas: Vec<f64> = shapes.iter().map(Shape::area).collect();
    let counts = allocate_points(cfg.points_per_frame, &areas);
    let mut frames = Vec::with_capacity(cfg.frames);
    let mut labels = Vec::with_capacity(cfg.frames);
    let mut locals = Vec::with_capacity(cfg.frames);
    for poses in &object_poses {
        let mut samples: Vec<(u32, Vec3)> = Vec::with_capacity(cfg.points_per_frame);
        for (k, shape) in shapes.iter().enumerate() {
            for _ in 0..counts[k] {
                samples.push((k as u32, shape.sample(&mut rng)));
            }
        }
        samples.shuffle(&mut rng);
        let pts = samples.iter().map(|(k, q)| poses[*k as usize].apply(q)).collect();
        frames.push(PointCloud::new(pts)?);
        labels.push(samples.iter().map(|(k, _)| *k).collect::<Vec<u32>>());
        locals.push(samples);
    }

    let mut gt_flows = Vec::with_capacity(cfg.frames - 1);
    for f in 0..cfg.frames - 1 {
        let vectors = locals[f]
            .iter()
            .map(|(k, q)| {
                let k = *k as usize;
                object_poses[f + 1][k].apply(q) - object_poses[f][k].apply(q)
            })
            .collect();
        gt_flows.push(SceneFlow::new(vectors)?);
    }

    Ok(GeneratedScene {
        frames,
        labels,
        gt_flows,
        object_poses,
        shapes,
        room,
    })
}

/// Adds i.i.d. zero-mean Gaussian noise of standard deviation `std` to every
/// coordinate.
pub fn add_flow_noise(flow: &SceneFlow, std: f64, seed: u64) -> Result<SceneFlow> {
    if !(std >= 0.0) || !std.is_finite() {
        return Err(Error::InvalidConfig(format!("noise std {std} must be finite and >= 0")));
    }
    if std == 0.0 {
        return Ok(flow.clone());
    }
    let normal = Normal::new(0.0, std).map_err(|e| Error::InvalidConfig(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    SceneFlow::new(
        flow.vectors()
            .iter()
            .map(|m| {
                m + Vec3::new(
                    normal.sample(&mut rng),
                    normal.sample(&mut rng),
                    normal.sample(&mut rng),
                )
            })
            .collect(),
    )
}

/// Seed of scene `index` in a dataset generated from `base`.
pub fn scene_seed(base: u64, index: usize) -> u64 {
    base ^ index as u64
}

const NOISE_SALT: u64 = 0x9e37_79b9_7f4a_7c15;

/// Every consecutive frame pair of `g`, ids `{prefix}_{f}`. With a positive
/// `noise_fraction` the input flow gets Gaussian noise of standard deviation
/// `noise_fraction · scene_extent(frame_t)`; the ground truth stays exact.
pub fn frame_pairs(
    g: &GeneratedScene,
    prefix: &str,
    noise_fraction: f64,
    seed: u64,
) -> Result<Vec<ScenePair>> {
    (0..g.frames.len() - 1)
        .map(|f| {
            let mut pair = g.pair(format!("{prefix}_{f}"), f);
            if noise_fraction > 0.0 {
                let std = noise_fraction * scene_extent(&pair.frame_t);
                pair.flow = add_flow_noise(&pair.flow, std, seed ^ NOISE_SALT ^ f as u64)?;
            }
            Ok(pair)
        })
        .collect()
}

/// Extent of a cloud: the longest side of its bounding box.
pub fn scene_extent(p: &PointCloud) -> f64 {
    let (lo, hi) = p.bounds();
    (hi - lo).max()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::weighted_kabsch;

    fn small(seed: u64) -> SceneGenConfig {
        SceneGenConfig {
            num_objects: (4, 4),
            seed,
            ..SceneGenConfig::default()
        }
    }

    #[test]
    fn deterministic() {
        assert_eq!(generate_scene(&small(3)).unwrap(), generate_scene(&small(3)).unwrap());
        assert_ne!(generate_scene(&small(3)).unwrap(), generate_scene(&small(4)).unwrap());
    }

    #[test]
    fn overpacked_room_fails() {
        let cfg = SceneGenConfig {
            num_objects: (8, 8),
            object_scale: Interval::point(0.45),
            max_rejections: 2000,
            ..SceneGenConfig::default()
        };
        assert!(matches!(generate_scene(&cfg), Err(Error::GenerationFailed { .. })));
    }

    #[test]
    fn per_object_flow_is_the_pose_step() {
        let s = generate_scene(&small(11)).unwrap();
        for f in 0..s.frames.len() - 1 {
            for k in 0..s.num_objects() {
                let w: Vec<f64> = s.labels[f].iter().map(|&l| f64::from(u8::from(l as usize == k))).collect();
                let dst = s.frames[f].displaced(s.gt_flows[f].vectors()).unwrap();
                let t = weighted_kabsch(&s.frames[f], &dst, &w).unwrap();
                let want = s.step_transform(f, k);
                assert!((t.rotation - want.rotation).norm() < 1e-9);
                assert!((t.translation - want.translation).norm() < 1e-9);
            }
        }
    }

    #[test]
    fn objects_disjoint_and_inside() {
        for seed in 0..10 {
            let s = generate_scene(&SceneGenConfig { seed, num_objects: (4, 6), ..SceneGenConfig::default() }).unwrap();
            for f in 0..s.frames.len() {
                for a in 0..s.num_objects() {
                    let ba = s.object_aabb(f, a);
                    assert!(inside_room(&ba, s.room));
                    for b in a + 1..s.num_objects() {
                        assert!(!aabbs_overlap(&ba, &s.object_aabb(f, b)));
                    }
                }
                assert_eq!(s.labels[f].len(), s.frames[f].len());
            }
        }
    }

    #[test]
    fn largest_remainder() {
        assert_eq!(allocate_points(10, &[1.0, 1.0, 1.0]), vec![4, 3, 3]);
        assert_eq!(allocate_points(7, &[2.0, 5.0]), vec![2, 5]);
    }

    #[test]
    fn noise_statistics() {
        let flow = SceneFlow::zeros(40_000);
        assert_eq!(add_flow_noise(&flow, 0.0, 1).unwrap(), flow);
        let noisy = add_flow_noise(&flow, 1.0, 5).unwrap();
        let xs: Vec<f64> = noisy.vectors().iter().flat_map(|v| v.iter().copied()).collect();
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / xs.len() as f64;
        assert!((var.sqrt() - 1.0).abs() < 0.01);
        assert_eq!(noisy, add_flow_noise(&flow, 1.0, 5).unwrap());
    }
}
