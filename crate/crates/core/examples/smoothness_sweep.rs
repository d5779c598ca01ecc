//! Effect of the smoothness weight on segmentation quality.

use rigidseg::metrics::{seg_metrics_soft, to_i64, SegOptions};
use rigidseg::{generate_scene, optimize_masks, LossWeights, OptimizerConfig, SceneGenConfig};

fn main() -> rigidseg::Result<()> {
    let scenes = (0..3)
        .map(|seed| {
            generate_scene(&SceneGenConfig {
                num_objects: (4, 6),
                seed,
                ..SceneGenConfig::default()
            })
            .map(|g| g.pair("sweep", 0))
        })
        .collect::<rigidseg::Result<Vec<_>>>()?;

    for smooth in [0.0, 0.1, 1.0, 10.0] {
        let cfg = OptimizerConfig {
            steps: 800,
            weights: LossWeights {
                smooth,
                ..LossWeights::default()
            },
            ..OptimizerConfig::default()
        };
        let mut miou = 0.0;
        for s in &scenes {
            let out = optimize_masks(s, &cfg)?;
            let gt = to_i64(s.gt_labels_t.as_deref().unwrap_or_default());
            miou += seg_metrics_soft(&out.seg, &gt, &SegOptions::default())?.miou;
        }
        println!("smooth weight {smooth:>5}: mean mIoU {:.1}", miou / scenes.len() as f64);
    }
    Ok(())
}
