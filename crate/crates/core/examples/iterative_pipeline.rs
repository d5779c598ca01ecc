//! Alternate segmentation and flow refinement over a noisy dataset.

use rigidseg::scene_gen::{frame_pairs, scene_seed};
use rigidseg::{generate_scene, run_pipeline, OptimizerConfig, PipelineConfig, SceneGenConfig};

fn main() -> rigidseg::Result<()> {
    let mut data = Vec::new();
    for i in 0..6 {
        let seed = scene_seed(0, i);
        let g = generate_scene(&SceneGenConfig {
            num_objects: (4, 4),
            frames: 2,
            seed,
            ..SceneGenConfig::default()
        })?;
        data.extend(frame_pairs(&g, &format!("scene{i}"), 0.05, seed)?);
    }

    let base = OptimizerConfig {
        steps: 1000,
        ..OptimizerConfig::default()
    };
    let result = run_pipeline(&data, &PipelineConfig::from_base(2, &base))?;
    for r in &result.reports {
        let a = &r.aggregate;
        println!(
            "round {}: mIoU {:.1}  AP {:.1}  EPE3D {:.3}  failures {}",
            r.round,
            a.miou.unwrap_or(f64::NAN),
            a.ap.unwrap_or(f64::NAN),
            a.epe3d.unwrap_or(f64::NAN),
            r.failures.len()
        );
    }
    Ok(())
}
