//! DBSCAN and Ward linkage on coordinates, flow and both.

use rigidseg::baselines::{dbscan, point_features, ward_linkage, DbscanConfig, FeatureSpace, WardConfig};
use rigidseg::metrics::{seg_metrics, to_i64};
use rigidseg::{generate_scene, SceneGenConfig};

fn main() -> rigidseg::Result<()> {
    let scene = generate_scene(&SceneGenConfig {
        num_objects: (5, 5),
        seed: 2,
        ..SceneGenConfig::default()
    })?
    .pair("baseline", 0);
    let gt = to_i64(scene.gt_labels_t.as_deref().unwrap_or_default());

    for space in [FeatureSpace::Xyz, FeatureSpace::Flow, FeatureSpace::Both] {
        let f = point_features(&scene, space);
        let db = dbscan(&f, space.dim(), &DbscanConfig { eps: 0.08, min_points: 5 })?;
        let ward = ward_linkage(&f, space.dim(), &WardConfig::TargetClusters(5))?;
        let (a, b) = (seg_metrics(&db, &gt)?, seg_metrics(&ward, &gt)?);
        println!("{space:?}: dbscan F1 {:.1} mIoU {:.1} | ward F1 {:.1} mIoU {:.1}", a.f1, a.miou, b.f1, b.miou);
    }
    Ok(())
}
