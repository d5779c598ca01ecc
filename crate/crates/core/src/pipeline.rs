//! Alternating segmentation and flow refinement over a dataset of scene pairs.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{KdTree, PointCloud};
use crate::masks::SoftSegmentation;
use crate::metrics::{flow_metrics, seg_metrics_soft, to_i64, SegOptions};
use crate::optimizer::{optimize_masks, OptimizerConfig};
use crate::refine::{align_frame_masks, object_aware_icp, transport_masks, IcpConfig};
use crate::report::{FailureRecord, MetricRecord, SceneRecord};
use crate::scene::{SceneFlow, ScenePair};

/// How frame-`t+1` masks are obtained.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NextFrameMasks {
    /// Nearest-neighbor transport of the frame-`t` masks along the flow.
    #[default]
    Transport,
    /// An independent optimization on the reversed pair, then slot alignment.
    Optimize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub rounds: usize,
    pub per_round_optimizer: Vec<OptimizerConfig>,
    pub per_round_icp: Vec<IcpConfig>,
    pub next_frame_masks: NextFrameMasks,
}

impl PipelineConfig {
    /// Default optimizer in every round, ICP iterations 20, 10, 5 (then 5),
    /// and the invariance term only in the last round of a multi-round run.
    pub fn new(rounds: usize) -> Self {
        Self::from_base(rounds, &OptimizerConfig::default())
    }

    pub fn from_base(rounds: usize, base: &OptimizerConfig) -> Self {
        let per_round_optimizer = (0..rounds)
            .map(|r| OptimizerConfig {
                invariance_enabled: rounds > 1 && r + 1 == rounds,
                ..base.clone()
            })
            .collect();
        let per_round_icp = (0..rounds)
            .map(|r| IcpConfig::with_iterations([20, 10, 5].get(r).copied().unwrap_or(5)))
            .collect();
        Self {
            rounds,
            per_round_optimizer,
            per_round_icp,
            next_frame_masks: NextFrameMasks::Transport,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.rounds == 0
            || self.per_round_optimizer.len() != self.rounds
            || self.per_round_icp.len() != self.rounds
        {
            return Err(Error::InvalidConfig(format!(
                "pipeline needs rounds >= 1 and one optimizer and icp config per round \
                 (rounds {}, optimizers {}, icp {})",
                self.rounds,
                self.per_round_optimizer.len(),
                self.per_round_icp.len()
            )));
        }
        for (o, i) in self.per_round_optimizer.iter().zip(&self.per_round_icp) {
            o.validate()?;
            i.validate()?;
        }
        Ok(())
    }
}

/// Per-scene result of one round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneOutput {
    pub seg_t: SoftSegmentation,
    pub seg_t1: SoftSegmentation,
    pub flow: SceneFlow,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundOutput {
    /// One entry per input scene, `None` where the scene failed.
    pub outputs: Vec<Option<SceneOutput>>,
    pub failures: Vec<FailureRecord>,
}

/// Segment, align, refine for every scene.
///
/// Scene `i` optimizes with seed `opt.seed ^ i`. Failing scenes are
/// reported and skipped.
pub fn run_round(dataset: &[ScenePair], opt: &OptimizerConfig, icp: &IcpConfig) -> RoundOutput {
    run_round_with(dataset, opt, icp, NextFrameMasks::Transport)
}

pub fn run_round_with(
    dataset: &[ScenePair],
    opt: &OptimizerConfig,
    icp: &IcpConfig,
    next: NextFrameMasks,
) -> RoundOutput {
    let results: Vec<Result<SceneOutput>> = dataset
        .par_iter()
        .enumerate()
        .map(|(i, scene)| process_scene(scene, &scene_config(opt, i), icp, next))
        .collect();
    let mut failures = Vec::new();
    let outputs = results
        .into_iter()
        .zip(dataset)
        .map(|(r, scene)| match r {
            Ok(o) => Some(o),
            Err(e) => {
                failures.push(FailureRecord {
                    scene_id: scene.scene_id.clone(),
                    error: e.to_string(),
                });
                None
            }
        })
        .collect();
    RoundOutput { outputs, failures }
}

/// `opt` with the optimizer and augmentation seeds of scene `index`.
pub fn scene_config(opt: &OptimizerConfig, index: usize) -> OptimizerConfig {
    let mut cfg = opt.clone();
    cfg.seed ^= index as u64;
    cfg.augment.seed ^= index as u64;
    cfg
}

fn process_scene(
    scene: &ScenePair,
    opt: &OptimizerConfig,
    icp: &IcpConfig,
    next: NextFrameMasks,
) -> Result<SceneOutput> {
    scene.validate()?;
    let seg_t = optimize_masks(scene, opt)?.seg;
    let seg_t1 = next_frame_masks(scene, &seg_t, opt, next)?;
    let flow = object_aware_icp(scene, &seg_t, &seg_t1, icp)?;
    Ok(SceneOutput { seg_t, seg_t1, flow })
}

/// Frame-`t+1` masks, slot-aligned with `seg_t`.
pub fn next_frame_masks(
    scene: &ScenePair,
    seg_t: &SoftSegmentation,
    opt: &OptimizerConfig,
    how: NextFrameMasks,
) -> Result<SoftSegmentation> {
    let warped = scene.warped();
    match how {
        NextFrameMasks::Transport => transport_masks(&warped, seg_t, &scene.frame_t1),
        NextFrameMasks::Optimize => {
            let reversed = reversed_pair(scene, &warped)?;
            let seg_t1 = optimize_masks(&reversed, opt)?.seg;
            align_frame_masks(scene, seg_t, &seg_t1)
        }
    }
}

/// Frame `t+1` to frame `t`, each point carrying the negated flow of its
/// nearest warped frame-`t` point.
fn reversed_pair(scene: &ScenePair, warped: &PointCloud) -> Result<ScenePair> {
    let tree = KdTree::from_cloud(warped);
    let flow = scene
        .frame_t1
        .iter()
        .map(|q| -scene.flow.vectors()[tree.nearest(&[q.x, q.y, q.z]).expect("non-empty").0])
        .collect();
    ScenePair::new(
        format!("{}-reversed", scene.scene_id),
        scene.frame_t1.clone(),
        scene.frame_t.clone(),
        SceneFlow::new(flow)?,
    )
}

/// Metrics of one round; segmentation against frame-`t` labels and the
/// refined flow against the ground-truth flow, where available.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundReport {
    pub round: usize,
    pub scenes: Vec<SceneRecord>,
    pub failures: Vec<FailureRecord>,
    pub aggregate: MetricRecord,
}

pub fn round_report(round: usize, dataset: &[ScenePair], out: &RoundOutput) -> RoundReport {
    let scenes: Vec<SceneRecord> = dataset
        .iter()
        .zip(&out.outputs)
        .filter_map(|(scene, o)| o.as_ref().map(|o| scene_record(scene, o)))
        .collect();
    let aggregate = MetricRecord::mean(scenes.iter().map(|s| &s.metrics));
    RoundReport {
        round,
        scenes,
        failures: out.failures.clone(),
        aggregate,
    }
}

pub fn scene_record(scene: &ScenePair, out: &SceneOutput) -> SceneRecord {
    let seg = scene
        .gt_labels_t
        .as_ref()
        .and_then(|gt| seg_metrics_soft(&out.seg_t, &to_i64(gt), &SegOptions::default()).ok());
    let flow = scene
        .gt_flow
        .as_ref()
        .and_then(|gt| flow_metrics(&out.flow, gt).ok());
    SceneRecord {
        scene_id: scene.scene_id.clone(),
        metrics: MetricRecord::new(seg.as_ref(), flow.as_ref()),
    }
}

/// Everything needed to continue a pipeline after any completed round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineState {
    pub config: PipelineConfig,
    pub rounds_done: usize,
    /// The dataset with the flows refined so far.
    pub dataset: Vec<ScenePair>,
    pub last: Option<RoundOutput>,
    pub reports: Vec<RoundReport>,
}

impl PipelineState {
    pub fn new(dataset: Vec<ScenePair>, config: PipelineConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            rounds_done: 0,
            dataset,
            last: None,
            reports: Vec::new(),
        })
    }

    pub fn is_done(&self) -> bool {
        self.rounds_done >= self.config.rounds
    }

    /// Runs the next round and threads the refined flows forward. Failed
    /// scenes keep their previous flow.
    pub fn step(&mut self) -> Result<&RoundReport> {
        if self.is_done() {
            return Err(Error::InvalidConfig("pipeline has no rounds left".into()));
        }
        let r = self.rounds_done;
        let out = run_round_with(
            &self.dataset,
            &self.config.per_round_optimizer[r],
            &self.config.per_round_icp[r],
            self.config.next_frame_masks,
        );
        self.reports.push(round_report(r + 1, &self.dataset, &out));
        for (scene, o) in self.dataset.iter_mut().zip(&out.outputs) {
            if let Some(o) = o {
                scene.flow = o.flow.clone();
            }
        }
        self.last = Some(out);
        self.rounds_done += 1;
        Ok(self.reports.last().expect("just pushed"))
    }

    pub fn run(mut self) -> Result<PipelineResult> {
        while !self.is_done() {
            self.step()?;
        }
        Ok(PipelineResult {
            outputs: self.last.map(|l| l.outputs).unwrap_or_default(),
            reports: self.reports,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineResult {
    /// Final-round outputs aligned with the input dataset.
    pub outputs: Vec<Option<SceneOutput>>,
    pub reports: Vec<RoundReport>,
}

pub fn run_pipeline(dataset: &[ScenePair], cfg: &PipelineConfig) -> Result<PipelineResult> {
    PipelineState::new(dataset.to_vec(), cfg.clone())?.run()
}
