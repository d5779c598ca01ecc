//! Per-scene gradient descent on mask logits under the combined objective.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::geometry::{PointCloud, RigidTransform, Vec3};
use crate::losses::{combined_loss, LossWeights, SmoothnessConfig};
use crate::masks::SoftSegmentation;
use crate::scene::{SceneFlow, ScenePair};

pub use crate::masks::harden;

/// Closed interval `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub const fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    pub const fn point(x: f64) -> Self {
        Self { lo: x, hi: x }
    }

    pub fn validate(&self, what: &str) -> Result<()> {
        if !(self.lo <= self.hi) || !self.lo.is_finite() || !self.hi.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "{what}: interval [{}, {}] is empty or non-finite",
                self.lo, self.hi
            )));
        }
        Ok(())
    }

    pub fn sample(&self, rng: &mut impl Rng) -> f64 {
        if self.lo == self.hi {
            self.lo
        } else {
            rng.random_range(self.lo..=self.hi)
        }
    }

    pub fn contains(&self, x: f64) -> bool {
        (self.lo..=self.hi).contains(&x)
    }
}

/// Random similarity transforms used to build the two views.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentationConfig {
    pub scale_range: Interval,
    pub yaw_range_deg: Interval,
    pub xz_translation_range: Interval,
    pub y_translation_range: Interval,
    pub seed: u64,
}

impl Default for AugmentationConfig {
    fn default() -> Self {
        Self {
            scale_range: Interval::new(0.95, 1.05),
            yaw_range_deg: Interval::new(-180.0, 180.0),
            xz_translation_range: Interval::point(0.0),
            y_translation_range: Interval::point(0.0),
            seed: 0,
        }
    }
}

impl AugmentationConfig {
    pub fn validate(&self) -> Result<()> {
        self.scale_range.validate("scale_range")?;
        self.yaw_range_deg.validate("yaw_range_deg")?;
        self.xz_translation_range.validate("xz_translation_range")?;
        self.y_translation_range.validate("y_translation_range")?;
        if !(self.scale_range.lo > 0.0) {
            return Err(Error::InvalidConfig("augmentation scale must be positive".into()));
        }
        Ok(())
    }
}

/// `p -> scale · (R p) + t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Similarity {
    pub scale: f64,
    pub rigid: RigidTransform,
}

impl Similarity {
    pub fn identity() -> Self {
        Self {
            scale: 1.0,
            rigid: RigidTransform::identity(),
        }
    }

    pub fn apply(&self, p: &Vec3) -> Vec3 {
        self.scale * (self.rigid.rotation * p) + self.rigid.translation
    }

    pub fn apply_cloud(&self, p: &PointCloud) -> PointCloud {
        PointCloud::new(p.iter().map(|x| self.apply(x)).collect())
            .expect("similarity of a valid cloud is valid")
    }

    /// The flow of the transformed scene: `g(p + m) − g(p)`.
    pub fn apply_flow(&self, flow: &SceneFlow) -> SceneFlow {
        SceneFlow::new(
            flow.vectors()
                .iter()
                .map(|m| self.scale * (self.rigid.rotation * m))
                .collect(),
        )
        .expect("similarity of a finite flow is finite")
    }
}

/// Draw number `index` of the augmentation stream seeded by `cfg.seed`.
pub fn sample_augmentation(cfg: &AugmentationConfig, index: u64) -> Similarity {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(index);
    let scale = cfg.scale_range.sample(&mut rng);
    let yaw = cfg.yaw_range_deg.sample(&mut rng).to_radians();
    let tx = cfg.xz_translation_range.sample(&mut rng);
    let tz = cfg.xz_translation_range.sample(&mut rng);
    let ty = cfg.y_translation_range.sample(&mut rng);
    let mut rigid = RigidTransform::from_axis_angle(&Vec3::y(), yaw);
    rigid.translation = Vec3::new(tx, ty, tz);
    Similarity { scale, rigid }
}

/// Update rule for the logits.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Method {
    GradientDescent,
    Adam { beta1: f64, beta2: f64, epsilon: f64 },
}

impl Method {
    pub fn adam() -> Self {
        Method::Adam {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Learning-rate multiplier over the run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Schedule {
    Constant,
    /// Half-cosine from `1` down to `final_fraction`.
    Cosine { final_fraction: f64 },
}

impl Schedule {
    pub fn factor(&self, step: usize, steps: usize) -> f64 {
        match *self {
            Schedule::Constant => 1.0,
            Schedule::Cosine { final_fraction } => {
                let x = if steps > 1 { step as f64 / (steps - 1) as f64 } else { 0.0 };
                let c = 0.5 * (1.0 + (std::f64::consts::PI * x).cos());
                final_fraction + (1.0 - final_fraction) * c
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub num_slots: usize,
    pub steps: usize,
    pub learning_rate: f64,
    pub method: Method,
    pub schedule: Schedule,
    pub weights: LossWeights,
    pub smoothness: SmoothnessConfig,
    pub augment: AugmentationConfig,
    pub smooth_warmup_steps: usize,
    pub invariance_enabled: bool,
    /// Std of the logit perturbations that separate the two views.
    pub view_noise: f64,
    pub init_std: f64,
    pub seed: u64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            num_slots: 8,
            steps: 2000,
            learning_rate: 0.05,
            method: Method::adam(),
            schedule: Schedule::Cosine { final_fraction: 0.0 },
            weights: LossWeights::default(),
            smoothness: SmoothnessConfig::default(),
            augment: AugmentationConfig::default(),
            smooth_warmup_steps: 50,
            invariance_enabled: false,
            view_noise: 0.1,
            init_std: 0.01,
            seed: 0,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_slots == 0 || self.steps == 0 {
            return Err(Error::InvalidConfig("num_slots and steps must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::InvalidConfig("learning_rate must be positive".into()));
        }
        if !(self.view_noise >= 0.0) || !(self.init_std >= 0.0) {
            return Err(Error::InvalidConfig("noise levels must be >= 0".into()));
        }
        self.weights.validate()?;
        self.smoothness.validate()?;
        self.augment.validate()
    }
}

/// Final masks and the per-step combined loss.
#[derive(Debug, Clone)]
pub struct Optimized {
    pub seg: SoftSegmentation,
    pub loss_trace: Vec<f64>,
}

/// Optimizes K-slot masks for frame `t` of `scene` from a seeded random start.
pub fn optimize_masks(scene: &ScenePair, cfg: &OptimizerConfig) -> Result<Optimized> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let init = SoftSegmentation::random(scene.num_points(), cfg.num_slots, cfg.init_std, &mut rng)?;
    optimize_from(scene, cfg, init)
}

/// As [`optimize_masks`] but starting from the logits of `init`.
pub fn optimize_from(
    scene: &ScenePair,
    cfg: &OptimizerConfig,
    init: SoftSegmentation,
) -> Result<Optimized> {
    cfg.validate()?;
    scene.validate()?;
    let n = scene.num_points();
    let k = init.num_slots();
    check_len("initial masks", n, init.num_points())?;
    if k != cfg.num_slots {
        return Err(Error::DimensionMismatch {
            context: "initial mask slots",
            expected: cfg.num_slots,
            actual: k,
        });
    }

    let p = &scene.frame_t;
    let flow = &scene.flow;
    let base_neighbors = cfg.smoothness.neighbors(p);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_0f_da7a);
    let view_noise = Normal::new(0.0, cfg.view_noise.max(f64::MIN_POSITIVE))
        .map_err(|e| Error::InvalidConfig(format!("view noise: {e}")))?;

    let mut logits = init.logits().to_vec();
    let mut state = UpdateState::new(cfg.method, logits.len());
    let mut trace = Vec::with_capacity(cfg.steps);

    for step in 0..cfg.steps {
        let seg = SoftSegmentation::from_logits(n, k, logits.clone())
            .map_err(|_| Error::NonFiniteLoss { step })?;
        let mut weights = cfg.weights;
        if step < cfg.smooth_warmup_steps {
            weights.smooth = 0.0;
        }
        let use_views = cfg.invariance_enabled && weights.invariant > 0.0;
        if !use_views {
            weights.invariant = 0.0;
        }

        let out = if use_views {
            let g = sample_augmentation(&cfg.augment, 2 * step as u64);
            let pv = g.apply_cloud(p);
            let fv = g.apply_flow(flow);
            let nv = cfg.smoothness.neighbors(&pv);
            let mut perturbed = || {
                let z: Vec<f64> = logits.iter().map(|x| x + view_noise.sample(&mut rng)).collect();
                SoftSegmentation::from_logits(n, k, z)
            };
            let a = perturbed()?;
            let b = perturbed()?;
            combined_loss(&pv, &fv, &seg, Some((&a, &b)), &weights, &cfg.smoothness, &nv)?
        } else {
            combined_loss(p, flow, &seg, None, &weights, &cfg.smoothness, &base_neighbors)?
        };

        let mut grad = out.grad;
        if let Some((ga, gb)) = out.view_grads {
            for ((g, a), b) in grad.iter_mut().zip(ga).zip(gb) {
                *g += a + b;
            }
        }
        if !out.value.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFiniteLoss { step });
        }
        trace.push(out.value);
        let lr = cfg.learning_rate * cfg.schedule.factor(step, cfg.steps);
        state.step(&mut logits, &grad, lr);
    }

    let seg = SoftSegmentation::from_logits(n, k, logits).map_err(|_| Error::NonFiniteLoss {
        step: cfg.steps,
    })?;
    Ok(Optimized {
        seg,
        loss_trace: trace,
    })
}

struct UpdateState {
    method: Method,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl UpdateState {
    fn new(method: Method, len: usize) -> Self {
        let moments = matches!(method, Method::Adam { .. });
        Self {
            method,
            m: if moments { vec![0.0; len] } else { Vec::new() },
            v: if moments { vec![0.0; len] } else { Vec::new() },
            t: 0,
        }
    }

    fn step(&mut self, x: &mut [f64], g: &[f64], lr: f64) {
        match self.method {
            Method::GradientDescent => {
                for (x, g) in x.iter_mut().zip(g) {
                    *x -= lr * g;
                }
            }
            Method::Adam { beta1, beta2, epsilon } => {
                self.t += 1;
                let c1 = 1.0 - beta1.powi(self.t);
                let c2 = 1.0 - beta2.powi(self.t);
                for i in 0..x.len() {
                    self.m[i] = beta1 * self.m[i] + (1.0 - beta1) * g[i];
                    self.v[i] = beta2 * self.v[i] + (1.0 - beta2) * g[i] * g[i];
                    let mh = self.m[i] / c1;
                    let vh = self.v[i] / c2;
                    x[i] -= lr * mh / (vh.sqrt() + epsilon);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid_scene(flow_of: impl Fn(&Vec3) -> Vec3) -> ScenePair {
        let mut pts = Vec::new();
        for i in 0..6 {
            for j in 0..6 {
                pts.push(Vec3::new(i as f64 * 0.05, 0.0, j as f64 * 0.05));
                pts.push(Vec3::new(0.6 + i as f64 * 0.05, 0.1, j as f64 * 0.05));
            }
        }
        let p = PointCloud::new(pts).unwrap();
        let flow = SceneFlow::new(p.iter().map(&flow_of).collect()).unwrap();
        ScenePair::new("grid", p.clone(), p.clone(), flow).unwrap()
    }

    #[test]
    fn identity_augmentation() {
        let cfg = AugmentationConfig {
            scale_range: Interval::point(1.0),
            yaw_range_deg: Interval::point(0.0),
            xz_translation_range: Interval::point(0.0),
            y_translation_range: Interval::point(0.0),
            seed: 3,
        };
        assert_eq!(sample_augmentation(&cfg, 17), Similarity::identity());
    }

    #[test]
    fn augmentation_is_deterministic() {
        let cfg = AugmentationConfig::default();
        assert_eq!(sample_augmentation(&cfg, 4), sample_augmentation(&cfg, 4));
        assert_ne!(sample_augmentation(&cfg, 4), sample_augmentation(&cfg, 5));
    }

    #[test]
    fn zero_flow_reaches_zero_loss() {
        let scene = grid_scene(|_| Vec3::zeros());
        let cfg = OptimizerConfig {
            num_slots: 2,
            ..OptimizerConfig::default()
        };
        let out = optimize_masks(&scene, &cfg).unwrap();
        assert!(*out.loss_trace.last().unwrap() < 1e-6);
    }

    #[test]
    fn two_translating_blocks_separate() {
        let scene = grid_scene(|p| {
            if p.x < 0.5 {
                Vec3::zeros()
            } else {
                Vec3::new(0.05, 0.0, 0.02)
            }
        });
        let cfg = OptimizerConfig {
            num_slots: 2,
            ..OptimizerConfig::default()
        };
        let out = optimize_masks(&scene, &cfg).unwrap();
        let labels = out.seg.harden();
        for (i, p) in scene.frame_t.iter().enumerate() {
            let same = labels[i] == labels[0];
            assert_eq!(same, p.x < 0.5, "point {i}");
        }
    }

    #[test]
    fn gradient_descent_trace_is_monotone() {
        let scene = grid_scene(|p| if p.x < 0.5 { Vec3::zeros() } else { Vec3::x() * 0.03 });
        let cfg = OptimizerConfig {
            num_slots: 3,
            steps: 60,
            learning_rate: 0.1,
            method: Method::GradientDescent,
            schedule: Schedule::Constant,
            smooth_warmup_steps: 0,
            ..OptimizerConfig::default()
        };
        let out = optimize_masks(&scene, &cfg).unwrap();
        for w in out.loss_trace.windows(2) {
            assert!(w[1] <= w[0] * (1.0 + 1e-6), "{} -> {}", w[0], w[1]);
        }
    }
}
