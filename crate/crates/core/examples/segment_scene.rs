//! Segment one generated scene from its flow alone and score the result.

use rigidseg::metrics::{seg_metrics_soft, to_i64, SegOptions};
use rigidseg::{generate_scene, optimize_masks, OptimizerConfig, SceneGenConfig};

fn main() -> rigidseg::Result<()> {
    let scene = generate_scene(&SceneGenConfig {
        num_objects: (5, 5),
        seed: 3,
        ..SceneGenConfig::default()
    })?
    .pair("demo", 0);

    let cfg = OptimizerConfig::default();
    let out = optimize_masks(&scene, &cfg)?;
    let trace = &out.loss_trace;
    for step in [0, 50, 200, 1000, trace.len() - 1] {
        println!("step {step:>4}  loss {:.5}", trace[step]);
    }

    let gt = to_i64(scene.gt_labels_t.as_deref().unwrap_or_default());
    let m = seg_metrics_soft(&out.seg, &gt, &SegOptions::default())?;
    println!("occupied slots {} of {}", out.seg.occupied_slots(), cfg.num_slots);
    println!("mIoU {:.1}  F1 {:.1}  AP {:.1}  RI {:.1}", m.miou, m.f1, m.ap, m.ri);
    Ok(())
}
