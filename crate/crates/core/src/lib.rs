//! Unsupervised segmentation of rigid objects in point clouds from scene flow.
//!
//! Given two frames and a flow field, [`optimize_masks`] fits per-point soft
//! masks over `K` slots so that every slot moves rigidly ([`dynamic_loss`])
//! and nearby points agree ([`smooth_loss`]). [`object_aware_icp`] then uses
//! those masks to refine the flow, and [`run_pipeline`] alternates the two.
//!
//! ```no_run
//! use rigidseg::{generate_scene, optimize_masks, OptimizerConfig, SceneGenConfig};
//!
//! let scene = generate_scene(&SceneGenConfig::default())?.pair("demo", 0);
//! let masks = optimize_masks(&scene, &OptimizerConfig::default())?.seg;
//! println!("{} objects found", masks.occupied_slots());
//! # Ok::<(), rigidseg::Error>(())
//! ```
//!
//! Synthetic data comes from [`scene_gen`], evaluation from [`metrics`],
//! classical clustering from [`baselines`] and file formats from [`io`].

pub mod baselines;
pub mod cli;
pub mod error;
pub mod geometry;
pub mod io;
pub mod losses;
pub mod masks;
pub mod metrics;
pub mod optimizer;
pub mod pipeline;
pub mod refine;
pub mod report;
pub mod scene;
pub mod scene_gen;

pub use error::{Error, Result};
pub use geometry::{weighted_kabsch, KabschFit, PointCloud, RigidTransform, Vec3};
pub use losses::{combined_loss, dynamic_loss, invariance_loss, match_masks, smooth_loss, LossWeights};
pub use masks::SoftSegmentation;
pub use metrics::{flow_metrics, seg_metrics, FlowMetrics, SegMetrics};
pub use optimizer::{optimize_masks, OptimizerConfig};
pub use pipeline::{run_pipeline, run_round, PipelineConfig};
pub use refine::{object_aware_icp, rigidify_flow, IcpConfig};
pub use scene::{SceneFlow, ScenePair};
pub use scene_gen::{generate_scene, SceneGenConfig};
