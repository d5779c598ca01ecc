//! Segmentation and flow metrics on hand-made inputs.

use rigidseg::metrics::{flow_metrics, seg_metrics, seg_metrics_with, SegOptions};
use rigidseg::{SceneFlow, Vec3};

fn main() -> rigidseg::Result<()> {
    let gt = [0, 0, 0, 0, 0, 0, 1, 1, 1, 1];
    let pred = [0, 0, 0, 0, 0, 1, 1, 1, 1, 1];
    let m = seg_metrics(&pred, &gt)?;
    println!("{m:#?}");

    // points of gt label 9 are not scored; negative predictions are noise
    let opts = SegOptions { ignore_label: Some(9) };
    let m = seg_metrics_with(&[0, 0, -1, 1, 1, 3], &[0, 0, 0, 1, 1, 9], None, &opts)?;
    println!("with noise and an ignored label: F1 {:.1}, RI {:.1}", m.f1, m.ri);

    let truth = SceneFlow::new(vec![Vec3::x(), Vec3::y(), Vec3::z()])?;
    let pred = SceneFlow::new(truth.vectors().iter().map(|v| v * 1.03).collect())?;
    let f = flow_metrics(&pred, &truth)?;
    println!("EPE3D {:.3}  AccS {:.0}  AccR {:.0}  Outlier {:.0}", f.epe3d, f.accs, f.accr, f.outlier);
    Ok(())
}
