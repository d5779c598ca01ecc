//! Segmentation quality as the input flow gets noisier.

use rigidseg::metrics::{seg_metrics_soft, to_i64, SegOptions};
use rigidseg::scene_gen::frame_pairs;
use rigidseg::{generate_scene, optimize_masks, OptimizerConfig, SceneGenConfig};

fn main() -> rigidseg::Result<()> {
    let g = generate_scene(&SceneGenConfig {
        num_objects: (5, 5),
        frames: 2,
        seed: 4,
        ..SceneGenConfig::default()
    })?;
    let cfg = OptimizerConfig {
        steps: 800,
        ..OptimizerConfig::default()
    };
    for noise in [0.0, 0.01, 0.03, 0.1] {
        let pair = frame_pairs(&g, "noise", noise, 4)?.remove(0);
        let out = optimize_masks(&pair, &cfg)?;
        let gt = to_i64(pair.gt_labels_t.as_deref().unwrap_or_default());
        let m = seg_metrics_soft(&out.seg, &gt, &SegOptions::default())?;
        println!("noise {noise:>4}: mIoU {:.1}  F1 {:.1}  AP {:.1}", m.miou, m.f1, m.ap);
    }
    Ok(())
}
