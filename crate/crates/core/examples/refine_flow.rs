//! Refine a noisy flow with ground-truth masks: single-pass rigidification
//! against object-aware ICP, on frames that share points and on frames that
//! were sampled independently.

use rigidseg::metrics::flow_metrics;
use rigidseg::refine::{object_aware_icp, rigidify_flow, IcpConfig};
use rigidseg::scene_gen::add_flow_noise;
use rigidseg::{generate_scene, SceneGenConfig, SoftSegmentation};

fn main() -> rigidseg::Result<()> {
    let g = generate_scene(&SceneGenConfig {
        num_objects: (4, 4),
        seed: 5,
        ..SceneGenConfig::default()
    })?;
    let one_hot = |labels: &[u32]| {
        let l: Vec<usize> = labels.iter().map(|&x| x as usize).collect();
        SoftSegmentation::one_hot(&l, g.num_objects())
    };
    let (seg_t, seg_t1) = (one_hot(&g.labels[0])?, one_hot(&g.labels[1])?);

    let mut pair = g.pair("noisy", 0);
    let gt = pair.flow.clone();
    pair.flow = add_flow_noise(&gt, 0.5 * gt.mean_magnitude(), 1)?;

    let shared = pair.with_flow(pair.flow.clone()).map(|mut p| {
        p.frame_t1 = p.frame_t.displaced(gt.vectors()).expect("same length");
        p
    })?;

    let epe = |f: &rigidseg::SceneFlow| flow_metrics(f, &gt).map(|m| m.epe3d * 100.0);
    println!("input             EPE3D {:.3}", epe(&pair.flow)?);
    println!("rigidify          EPE3D {:.3}", epe(&rigidify_flow(&pair.frame_t, &pair.flow, &seg_t)?)?);
    let cfg = IcpConfig::default();
    println!("icp, resampled    EPE3D {:.3}", epe(&object_aware_icp(&pair, &seg_t, &seg_t1, &cfg)?)?);
    println!("icp, shared pts   EPE3D {:.3}", epe(&object_aware_icp(&shared, &seg_t, &seg_t, &cfg)?)?);
    Ok(())
}
