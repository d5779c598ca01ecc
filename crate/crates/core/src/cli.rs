//! Command-line front end. Exit codes: 0 success, 1 failure of some scenes
//! or of the command, 2 usage error.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::Serialize;

use crate::baselines::{dbscan, point_features, ward_linkage, DbscanConfig, FeatureSpace, WardConfig};
use crate::error::{Error, Result};
use crate::io::{
    decode_labels, encode_labels, ensure_dir, mask_path, read_frames, read_masks, read_scene,
    scene_path, write_masks, write_scene, FrameRecord, Manifest, ManifestEntry, MaskRecord,
};
use crate::losses::SmoothnessConfig;
use crate::metrics::{flow_metrics, seg_metrics_soft, seg_metrics_with, to_i64, SegOptions};
use crate::optimizer::{optimize_masks, OptimizerConfig};
use crate::pipeline::{next_frame_masks, scene_config, NextFrameMasks, PipelineConfig, PipelineState};
use crate::refine::{align_frame_masks, object_aware_icp, transport_masks, IcpConfig, Temperature};
use crate::report::{FailureRecord, MetricRecord, RunReport, SceneRecord};
use crate::scene::ScenePair;
use crate::scene_gen::{frame_pairs, generate_scene, scene_seed, SceneGenConfig};

pub const WORKERS_ENV: &str = "RIGIDSEG_WORKERS";

#[derive(Debug, Parser)]
#[command(name = "rigidseg", version, about = "Unsupervised rigid-object segmentation of point-cloud scene pairs")]
pub struct Cli {
    /// Worker threads (overrides RIGIDSEG_WORKERS).
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate synthetic scene pairs.
    Gen(GenArgs),
    /// Optimize object masks for every scene.
    Segment(SegmentArgs),
    /// Refine scene flow with object-aware ICP.
    Refine(RefineArgs),
    /// Alternate segmentation and flow refinement.
    Pipeline(PipelineArgs),
    /// Cluster with a classical baseline.
    Baseline(BaselineArgs),
    /// Score predictions against ground truth.
    Eval(EvalArgs),
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[arg(long)]
    pub scenes: usize,
    /// Inclusive object count, `A..B` or `A`.
    #[arg(long, default_value = "4..8", value_parser = parse_range)]
    pub objects: (usize, usize),
    #[arg(long, default_value_t = 4)]
    pub frames: usize,
    #[arg(long, default_value_t = 512)]
    pub points: usize,
    /// Input-flow noise std as a fraction of scene extent.
    #[arg(long, default_value_t = 0.0)]
    pub flow_noise: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Clone, Serialize)]
pub struct OptimizerArgs {
    #[arg(long, default_value_t = 8)]
    pub slots: usize,
    #[arg(long, default_value_t = 2000)]
    pub steps: usize,
    #[arg(long, default_value_t = 0.05)]
    pub lr: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

impl OptimizerArgs {
    fn config(&self, points: usize) -> OptimizerConfig {
        let mut cfg = OptimizerConfig {
            num_slots: self.slots,
            steps: self.steps,
            learning_rate: self.lr,
            smoothness: SmoothnessConfig::for_density(points),
            seed: self.seed,
            ..OptimizerConfig::default()
        };
        cfg.augment.seed = self.seed;
        cfg
    }
}

#[derive(Debug, Args)]
pub struct SegmentArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[command(flatten)]
    pub opt: OptimizerArgs,
    /// Include the cross-view invariance term.
    #[arg(long)]
    pub invariance: bool,
    /// Optimize frame t+1 independently instead of transporting masks.
    #[arg(long)]
    pub optimize_next: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct RefineArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub masks: PathBuf,
    #[arg(long, default_value_t = 20)]
    pub iters: usize,
    /// Absolute correspondence temperature; default is relative to point spacing.
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long, default_value_t = 32)]
    pub neighbors: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PipelineArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long, default_value_t = 2)]
    pub rounds: usize,
    #[command(flatten)]
    pub opt: OptimizerArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Algo {
    Dbscan,
    Ward,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Features {
    Xyz,
    Flow,
    Both,
}

impl From<Features> for FeatureSpace {
    fn from(f: Features) -> Self {
        match f {
            Features::Xyz => FeatureSpace::Xyz,
            Features::Flow => FeatureSpace::Flow,
            Features::Both => FeatureSpace::Both,
        }
    }
}

#[derive(Debug, Args, Serialize)]
pub struct BaselineArgs {
    #[arg(long)]
    pub algo: Algo,
    #[arg(long, default_value = "xyz")]
    pub features: Features,
    #[serde(skip)]
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long, default_value_t = 0.05)]
    pub eps: f64,
    #[arg(long, default_value_t = 5)]
    pub min_points: usize,
    /// Ward: number of clusters.
    #[arg(long, conflicts_with = "threshold")]
    pub clusters: Option<usize>,
    /// Ward: merge distance threshold.
    #[arg(long)]
    pub threshold: Option<f64>,
    #[serde(skip)]
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long)]
    pub gt: PathBuf,
    #[arg(long)]
    pub report: PathBuf,
    /// Ground-truth label excluded from scoring.
    #[arg(long)]
    pub ignore_label: Option<i64>,
}

fn parse_range(s: &str) -> std::result::Result<(usize, usize), String> {
    let parse = |x: &str| x.trim().parse::<usize>().map_err(|e| format!("{x:?}: {e}"));
    let (a, b) = match s.split_once("..") {
        Some((a, b)) => (parse(a)?, parse(b.trim_start_matches('='))?),
        None => {
            let v = parse(s)?;
            (v, v)
        }
    };
    if a == 0 || a > b {
        return Err(format!("range {s} must satisfy 1 <= A <= B"));
    }
    Ok((a, b))
}

/// Outcome of a command that did not hit a usage error.
#[derive(Debug, Default)]
pub struct Outcome {
    pub failures: Vec<FailureRecord>,
}

/// Parses `argv` and runs the command, returning the exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(cli) {
        Ok(o) if o.failures.is_empty() => 0,
        Ok(o) => {
            for f in &o.failures {
                eprintln!("scene {} failed: {}", f.scene_id, f.error);
            }
            1
        }
        Err(Error::InvalidConfig(msg)) => {
            eprintln!("error: {msg}");
            2
        }
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

pub fn execute(cli: Cli) -> Result<Outcome> {
    let workers = cli
        .workers
        .or_else(|| std::env::var(WORKERS_ENV).ok().and_then(|v| v.parse().ok()))
        .unwrap_or(0);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::InvalidConfig(format!("worker pool: {e}")))?;
    pool.install(|| match cli.command {
        Command::Gen(a) => gen(&a),
        Command::Segment(a) => segment(&a),
        Command::Refine(a) => refine(&a),
        Command::Pipeline(a) => pipeline(&a),
        Command::Baseline(a) => baseline(&a),
        Command::Eval(a) => eval(&a),
    })
}

fn gen(a: &GenArgs) -> Result<Outcome> {
    if !(a.flow_noise >= 0.0) {
        return Err(Error::InvalidConfig("--flow-noise must be >= 0".into()));
    }
    let base = SceneGenConfig {
        num_objects: a.objects,
        frames: a.frames,
        points_per_frame: a.points,
        seed: a.seed,
        ..SceneGenConfig::default()
    };
    base.validate()?;
    ensure_dir(&a.out)?;
    let results: Vec<(String, u64, Result<Vec<ScenePair>>)> = (0..a.scenes)
        .into_par_iter()
        .map(|i| {
            let seed = scene_seed(a.seed, i);
            let prefix = format!("scene{i:04}");
            let cfg = SceneGenConfig { seed, ..base.clone() };
            let pairs = generate_scene(&cfg).and_then(|g| frame_pairs(&g, &prefix, a.flow_noise, seed));
            (prefix, seed, pairs)
        })
        .collect();

    #[derive(Serialize)]
    struct GenRecord<'a> {
        generator: &'a SceneGenConfig,
        flow_noise: f64,
    }
    let mut manifest = Manifest::new(
        "gen",
        a.seed,
        &GenRecord {
            generator: &base,
            flow_noise: a.flow_noise,
        },
    );
    for (prefix, seed, pairs) in results {
        match pairs {
            Ok(pairs) => {
                for p in pairs {
                    write_scene(&scene_path(&a.out, &p.scene_id), &p)?;
                    manifest.scenes.push(ManifestEntry {
                        id: p.scene_id,
                        seed: Some(seed),
                    });
                }
            }
            Err(e) => manifest.failures.push(FailureRecord {
                scene_id: prefix,
                error: e.to_string(),
            }),
        }
    }
    manifest.write(&a.out)?;
    Ok(Outcome {
        failures: manifest.failures,
    })
}

fn load_dataset(dir: &Path) -> Result<(Manifest, Vec<ScenePair>)> {
    let m = Manifest::read(dir)?;
    let scenes = m
        .scenes
        .par_iter()
        .map(|e| {
            let mut s = read_scene(&scene_path(dir, &e.id))?;
            s.scene_id = e.id.clone();
            Ok(s)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((m, scenes))
}

/// Writes per-scene results in input order; failures land in the manifest.
fn finish<T: Sync>(
    out: &Path,
    mut manifest: Manifest,
    dataset: &[ScenePair],
    results: &[Result<T>],
    write: impl Fn(&ScenePair, &T) -> Result<()>,
) -> Result<Outcome> {
    for (scene, r) in dataset.iter().zip(results) {
        match r {
            Ok(v) => {
                write(scene, v)?;
                manifest.scenes.push(ManifestEntry {
                    id: scene.scene_id.clone(),
                    seed: None,
                });
            }
            Err(e) => manifest.failures.push(FailureRecord {
                scene_id: scene.scene_id.clone(),
                error: e.to_string(),
            }),
        }
    }
    manifest.write(out)?;
    Ok(Outcome {
        failures: manifest.failures,
    })
}

fn segment(a: &SegmentArgs) -> Result<Outcome> {
    let (_, data) = load_dataset(&a.input)?;
    ensure_dir(&a.out)?;
    let next = if a.optimize_next {
        NextFrameMasks::Optimize
    } else {
        NextFrameMasks::Transport
    };
    let results: Vec<Result<MaskRecord>> = data
        .par_iter()
        .enumerate()
        .map(|(i, s)| {
            let mut cfg = a.opt.config(s.num_points());
            cfg.invariance_enabled = a.invariance;
            let cfg = scene_config(&cfg, i);
            let seg_t = optimize_masks(s, &cfg)?.seg;
            let seg_t1 = next_frame_masks(s, &seg_t, &cfg, next)?;
            Ok(MaskRecord {
                seg_t,
                seg_t1: Some(seg_t1),
            })
        })
        .collect();
    let cfg = data
        .first()
        .map(|s| a.opt.config(s.num_points()))
        .unwrap_or_else(|| a.opt.config(512));
    let manifest = Manifest::new("segment", a.opt.seed, &cfg);
    finish(&a.out, manifest, &data, &results, |s, m| {
        write_masks(&mask_path(&a.out, &s.scene_id), m)
    })
}

fn refine(a: &RefineArgs) -> Result<Outcome> {
    let (_, data) = load_dataset(&a.input)?;
    ensure_dir(&a.out)?;
    let cfg = IcpConfig {
        iterations: a.iters,
        temperature: a.tau.map_or(IcpConfig::default().temperature, Temperature::Absolute),
        correspondence_k: a.neighbors,
        ..IcpConfig::default()
    };
    cfg.validate()?;
    let results: Vec<Result<(ScenePair, MaskRecord)>> = data
        .par_iter()
        .map(|s| {
            let masks = read_masks(&mask_path(&a.masks, &s.scene_id))?;
            let seg_t1 = match &masks.seg_t1 {
                Some(m) => align_frame_masks(s, &masks.seg_t, m)?,
                None => transport_masks(&s.warped(), &masks.seg_t, &s.frame_t1)?,
            };
            let flow = object_aware_icp(s, &masks.seg_t, &seg_t1, &cfg)?;
            Ok((
                s.with_flow(flow)?,
                MaskRecord {
                    seg_t: masks.seg_t,
                    seg_t1: Some(seg_t1),
                },
            ))
        })
        .collect();
    let manifest = Manifest::new("refine", 0, &cfg);
    finish(&a.out, manifest, &data, &results, |_, (scene, m)| {
        write_scene(&scene_path(&a.out, &scene.scene_id), scene)?;
        write_masks(&mask_path(&a.out, &scene.scene_id), m)
    })
}

fn pipeline(a: &PipelineArgs) -> Result<Outcome> {
    let (_, data) = load_dataset(&a.input)?;
    ensure_dir(&a.out)?;
    let points = data.first().map_or(512, |s| s.num_points());
    let cfg = PipelineConfig::from_base(a.rounds, &a.opt.config(points));
    let mut state = PipelineState::new(data, cfg.clone())?;
    let report_path = a.out.join("report.jsonl");
    let mut failures = Vec::new();
    while !state.is_done() {
        let input = state.dataset.clone();
        let round = state.rounds_done + 1;
        let report = state.step()?.clone();
        let out = state.last.as_ref().expect("round ran");
        let dir = a.out.join(format!("round{round}"));
        ensure_dir(&dir)?;
        let results: Vec<Result<&_>> = out
            .outputs
            .iter()
            .zip(&report_failures(&input, out))
            .map(|(o, f)| o.as_ref().ok_or_else(|| Error::InvalidConfig(f.clone())))
            .collect();
        let manifest = Manifest::new(format!("pipeline round {round}"), a.opt.seed, &cfg);
        let o = finish(&dir, manifest, &input, &results, |s, o| {
            write_scene(&scene_path(&dir, &s.scene_id), &s.with_flow(o.flow.clone())?)?;
            write_masks(
                &mask_path(&dir, &s.scene_id),
                &MaskRecord {
                    seg_t: o.seg_t.clone(),
                    seg_t1: Some(o.seg_t1.clone()),
                },
            )
        })?;
        failures = o.failures;
        let mut run = RunReport::new(format!("pipeline round {round}"), a.opt.seed, &cfg);
        run.scenes = report.scenes;
        run.failures = report.failures;
        run.append_to(&report_path)?;
    }
    // The last round is also the final output.
    let last = a.out.join(format!("round{}", cfg.rounds));
    for entry in std::fs::read_dir(&last).map_err(|source| Error::Io {
        path: last.clone(),
        source,
    })? {
        let entry = entry.map_err(|source| Error::Io {
            path: last.clone(),
            source,
        })?;
        let to = a.out.join(entry.file_name());
        std::fs::copy(entry.path(), &to).map_err(|source| Error::Io { path: to, source })?;
    }
    Ok(Outcome { failures })
}

fn report_failures(input: &[ScenePair], out: &crate::pipeline::RoundOutput) -> Vec<String> {
    input
        .iter()
        .map(|s| {
            out.failures
                .iter()
                .find(|f| f.scene_id == s.scene_id)
                .map_or_else(String::new, |f| f.error.clone())
        })
        .collect()
}

fn baseline(a: &BaselineArgs) -> Result<Outcome> {
    let (_, data) = load_dataset(&a.input)?;
    ensure_dir(&a.out)?;
    let space: FeatureSpace = a.features.into();
    let ward = match (a.clusters, a.threshold) {
        (_, Some(t)) => WardConfig::MergeDistanceThreshold(t),
        (Some(c), None) => WardConfig::TargetClusters(c),
        (None, None) => WardConfig::default(),
    };
    let db = DbscanConfig {
        eps: a.eps,
        min_points: a.min_points,
    };
    if matches!(a.algo, Algo::Dbscan) {
        db.validate()?;
    }
    let results: Vec<Result<Vec<i64>>> = data
        .par_iter()
        .map(|s| {
            let f = point_features(s, space);
            match a.algo {
                Algo::Dbscan => dbscan(&f, space.dim(), &db),
                Algo::Ward => ward_linkage(&f, space.dim(), &ward),
            }
        })
        .collect();
    let manifest = Manifest::new("baseline", 0, a);
    finish(&a.out, manifest, &data, &results, |s, labels| {
        let mut bytes = Vec::new();
        FrameRecord {
            points: s.frame_t.clone(),
            flow: None,
            labels: Some(encode_labels(labels)?),
            gt_flow: None,
        }
        .encode(&mut bytes)?;
        FrameRecord {
            points: s.frame_t1.clone(),
            flow: None,
            labels: None,
            gt_flow: None,
        }
        .encode(&mut bytes)?;
        let path = scene_path(&a.out, &s.scene_id);
        std::fs::write(&path, bytes).map_err(|source| Error::Io { path, source })
    })
}

/// Scores one scene. Masks (`.ogcm`) take precedence over a label block in
/// the predicted scene file; flow is scored when the prediction has one.
pub fn score_scene(pred_dir: &Path, gt: &ScenePair, opts: &SegOptions) -> Result<SceneRecord> {
    let id = &gt.scene_id;
    let gt_labels = gt.gt_labels_t.as_ref().map(|l| to_i64(l));
    let masks = mask_path(pred_dir, id);
    let file = scene_path(pred_dir, id);
    let frames = if file.exists() {
        Some(read_frames(&file)?.0)
    } else {
        None
    };
    let seg = if masks.exists() {
        let m = read_masks(&masks)?;
        gt_labels
            .as_ref()
            .map(|g| seg_metrics_soft(&m.seg_t, g, opts))
            .transpose()?
    } else {
        match (frames.as_ref().and_then(|f| f.labels.as_ref()), &gt_labels) {
            (Some(pred), Some(g)) => Some(seg_metrics_with(&decode_labels(pred), g, None, opts)?),
            _ => None,
        }
    };
    let flow = match (frames.as_ref().and_then(|f| f.flow.as_ref()), &gt.gt_flow) {
        (Some(p), Some(g)) => Some(flow_metrics(p, g)?),
        _ => None,
    };
    if seg.is_none() && flow.is_none() && !masks.exists() && frames.is_none() {
        return Err(Error::Io {
            path: file,
            source: std::io::Error::new(std::io::ErrorKind::NotFound, "no prediction for scene"),
        });
    }
    Ok(SceneRecord {
        scene_id: id.clone(),
        metrics: MetricRecord::new(seg.as_ref(), flow.as_ref()),
    })
}

fn eval(a: &EvalArgs) -> Result<Outcome> {
    let (_, data) = load_dataset(&a.gt)?;
    let opts = SegOptions {
        ignore_label: a.ignore_label,
    };
    let results: Vec<Result<SceneRecord>> = data.par_iter().map(|s| score_scene(&a.pred, s, &opts)).collect();

    let mut report = RunReport::new("eval", 0, &opts);
    for (s, r) in data.iter().zip(results) {
        match r {
            Ok(rec) => report.scenes.push(rec),
            Err(e) => report.failures.push(FailureRecord {
                scene_id: s.scene_id.clone(),
                error: e.to_string(),
            }),
        }
    }
    if let Some(parent) = a.report.parent().filter(|p| !p.as_os_str().is_empty()) {
        ensure_dir(parent)?;
    }
    report.append_to(&a.report)?;
    Ok(Outcome {
        failures: report.failures,
    })
}
