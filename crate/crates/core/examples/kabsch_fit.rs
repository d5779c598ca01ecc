//! Recover a rigid motion from weighted correspondences, with outliers
//! masked out by zero weight.

use rigidseg::geometry::{weighted_kabsch, PointCloud, RigidTransform, Vec3};

fn main() -> rigidseg::Result<()> {
    let src: Vec<Vec3> = (0..40)
        .map(|i| {
            let t = i as f64 * 0.37;
            Vec3::new(t.cos(), (2.0 * t).sin(), 0.1 * t)
        })
        .collect();
    let mut truth = RigidTransform::from_axis_angle(&Vec3::new(1.0, 2.0, 0.5).normalize(), 0.8);
    truth.translation = Vec3::new(0.3, -0.2, 1.0);

    let mut dst: Vec<Vec3> = src.iter().map(|p| truth.apply(p)).collect();
    let mut weights = vec![1.0; src.len()];
    for i in (0..src.len()).step_by(7) {
        dst[i] += Vec3::new(5.0, 0.0, 0.0);
        weights[i] = 0.0;
    }

    let fit = weighted_kabsch(&PointCloud::new(src)?, &PointCloud::new(dst)?, &weights)?;
    println!("rotation error    {:.3e}", (fit.rotation - truth.rotation).norm());
    println!("translation error {:.3e}", (fit.translation - truth.translation).norm());
    println!("det(R)            {:.12}", fit.rotation.determinant());
    Ok(())
}
