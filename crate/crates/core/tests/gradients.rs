use proptest::prelude::*;
use rigidseg::geometry::{PointCloud, RigidTransform, Vec3};
use rigidseg::losses::{combined_loss, Distance, LossWeights, SmoothnessConfig};
use rigidseg::masks::SoftSegmentation;
use rigidseg::scene::SceneFlow;

fn fd_check(logits: &[f64], grad: &[f64], f: impl Fn(&[f64]) -> f64) -> f64 {
    let h = 1e-5;
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 0..logits.len() {
        let mut a = logits.to_vec();
        a[i] += h;
        let mut b = logits.to_vec();
        b[i] -= h;
        let fd = (f(&a) - f(&b)) / (2.0 * h);
        num += (fd - grad[i]).powi(2);
        den += fd.powi(2).max(grad[i].powi(2));
    }
    num.sqrt() / den.sqrt().max(1e-12)
}

fn scene(points: &[(f64, f64, f64)], angle: f64) -> (PointCloud, SceneFlow) {
    let p = PointCloud::new(points.iter().map(|&(x, y, z)| Vec3::new(x, y, z)).collect()).unwrap();
    let left = RigidTransform::from_axis_angle(&Vec3::y(), angle);
    let right = RigidTransform::from_translation(Vec3::new(0.05, 0.0, -0.02));
    let flow = SceneFlow::new(
        p.iter()
            .map(|x| if x.x < 0.5 { left.apply(x) - x } else { right.apply(x) - x })
            .collect(),
    )
    .unwrap();
    (p, flow)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    /// Smooth distances and the full combined objective, views included.
    #[test]
    fn combined_gradient_matches_differences(
        pts in prop::collection::vec((0.0..1.0f64, 0.0..1.0f64, 0.0..1.0f64), 24),
        logits in prop::collection::vec(-2.0..2.0f64, 72),
        views in prop::collection::vec(-2.0..2.0f64, 144),
        angle in -0.3..0.3f64,
        distance in prop_oneof![Just(Distance::L2), Just(Distance::CrossEntropy)],
        tau in prop::option::of(0.01..0.2f64),
    ) {
        let (p, flow) = scene(&pts, angle);
        let mut cfg = SmoothnessConfig::two_scale(4, 0.4, 8, 0.8);
        cfg.distance = distance;
        cfg.motion_temperature = tau;
        let nb = cfg.neighbors(&p);
        let w = LossWeights::default();
        let seg = |l: &[f64]| SoftSegmentation::from_logits(24, 3, l.to_vec()).unwrap();
        let va = seg(&views[..72]);
        let vb = seg(&views[72..]);
        let out = combined_loss(&p, &flow, &seg(&logits), Some((&va, &vb)), &w, &cfg, &nb).unwrap();
        let err = fd_check(&logits, &out.grad, |l| {
            combined_loss(&p, &flow, &seg(l), None, &w, &cfg, &nb).unwrap().value
        });
        prop_assert!(err < 1e-4, "main gradient error {err}");

        let perm = rigidseg::losses::match_masks(&va, &vb).unwrap().permutation;
        let inv = |a: &SoftSegmentation, b: &SoftSegmentation| {
            let b = b.permute_columns(&perm).unwrap();
            w.invariant * (0..24)
                .map(|i| a.row(i).iter().zip(b.row(i)).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt())
                .sum::<f64>() / 24.0
        };
        let (ga, gb) = out.view_grads.unwrap();
        let ea = fd_check(&views[..72], &ga, |l| inv(&seg(l), &vb));
        let eb = fd_check(&views[72..], &gb, |l| inv(&va, &seg(l)));
        prop_assert!(ea < 1e-4 && eb < 1e-4, "view gradient errors {ea} {eb}");
        let expect = w.invariant * out.components.invariant;
        prop_assert!((inv(&va, &vb) - expect).abs() < 1e-12);
    }
}
