use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rigidseg::baselines::{dbscan, ward_linkage, DbscanConfig, WardConfig};
use rigidseg::geometry::{weighted_kabsch, PointCloud, RigidTransform, Vec3};
use rigidseg::io::{decode_masks, decode_scene, encode_masks, encode_scene, MaskRecord};
use rigidseg::losses::{dynamic_loss, invariance_loss, match_masks, soft_iou_matrix};
use rigidseg::masks::SoftSegmentation;
use rigidseg::metrics::{flow_metrics, seg_metrics};
use rigidseg::refine::{align_frame_masks, object_aware_icp, rigidify_flow, IcpConfig};
use rigidseg::scene::{SceneFlow, ScenePair};
use rigidseg::scene_gen::{generate_scene, SceneGenConfig};

fn vec3() -> impl Strategy<Value = Vec3> {
    (-1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64).prop_map(|(x, y, z)| Vec3::new(x, y, z))
}

fn transform() -> impl Strategy<Value = RigidTransform> {
    (vec3(), -3.1..3.1f64, vec3()).prop_filter_map("axis", |(axis, angle, t)| {
        (axis.norm() > 0.1).then(|| {
            let mut r = RigidTransform::from_axis_angle(&axis.normalize(), angle);
            r.translation = t;
            r
        })
    })
}

fn cloud(n: std::ops::Range<usize>) -> impl Strategy<Value = PointCloud> {
    prop::collection::vec(vec3(), n).prop_map(|v| PointCloud::new(v).unwrap())
}

fn segmentation(n: usize, k: usize) -> impl Strategy<Value = SoftSegmentation> {
    prop::collection::vec(-3.0..3.0f64, n * k).prop_map(move |l| SoftSegmentation::from_logits(n, k, l).unwrap())
}

fn labels(n: usize, k: i64) -> impl Strategy<Value = Vec<i64>> {
    prop::collection::vec(0..k, n)
}

fn small_scene() -> impl Strategy<Value = rigidseg::scene_gen::GeneratedScene> {
    (0u64..1000, 2usize..5).prop_map(|(seed, objects)| {
        generate_scene(&SceneGenConfig {
            num_objects: (objects, objects),
            frames: 3,
            points_per_frame: 200,
            seed,
            ..SceneGenConfig::default()
        })
        .unwrap()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn kabsch_recovers_transforms(t in transform(), p in cloud(4..40)) {
        let q = PointCloud::new(p.iter().map(|x| t.apply(x)).collect()).unwrap();
        let (lo, hi) = p.bounds();
        prop_assume!((hi - lo).min() > 0.2);
        let fit = weighted_kabsch(&p, &q, &vec![1.0; p.len()]).unwrap();
        prop_assert!((fit.rotation - t.rotation).norm() < 1e-8);
        prop_assert!((fit.translation - t.translation).norm() < 1e-8);
        prop_assert!((fit.rotation.determinant() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn compose_with_inverse_is_identity(t in transform(), p in vec3()) {
        let back = t.inverse().compose(&t).apply(&p);
        prop_assert!((back - p).norm() < 1e-12);
    }

    #[test]
    fn mask_rows_are_distributions(seg in segmentation(10, 5)) {
        for i in 0..10 {
            let s: f64 = seg.row(i).iter().sum();
            prop_assert!((s - 1.0).abs() < 1e-12);
            prop_assert!(seg.row(i).iter().all(|m| (0.0..=1.0).contains(m)));
        }
    }

    #[test]
    fn matching_recovers_column_permutation(seg in segmentation(30, 4), perm in Just((0..4).collect::<Vec<usize>>()).prop_shuffle()) {
        let shuffled = seg.permute_columns(&perm).unwrap();
        let m = match_masks(&seg, &shuffled).unwrap();
        let back = m.reorder(&shuffled).unwrap();
        let iou = soft_iou_matrix(&seg, &back).unwrap();
        let diag: f64 = (0..4).map(|k| iou[k * 4 + k]).sum();
        prop_assert!((diag - m.total_iou).abs() < 1e-9);
        prop_assert!(invariance_loss(&seg, &shuffled).unwrap().value < 1e-12);
    }

    #[test]
    fn invariance_loss_is_symmetric(a in segmentation(20, 3), b in segmentation(20, 3)) {
        let ab = invariance_loss(&a, &b).unwrap().value;
        let ba = invariance_loss(&b, &a).unwrap().value;
        prop_assert!((ab - ba).abs() < 1e-12);
    }

    #[test]
    fn dynamic_loss_is_rigid_invariant(seed in 0u64..500, t in transform()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = PointCloud::new((0..40).map(|i| Vec3::new((i % 7) as f64, (i / 7) as f64, (i % 3) as f64) * 0.1).collect()).unwrap();
        let flow = SceneFlow::new(p.iter().map(|x| Vec3::new(x.y, -x.x, 0.3) * 0.05).collect()).unwrap();
        let seg = SoftSegmentation::random(40, 3, 1.0, &mut rng).unwrap();
        let a = dynamic_loss(&p, &flow, &seg).unwrap().value;
        let pt = PointCloud::new(p.iter().map(|x| t.apply(x)).collect()).unwrap();
        let b = dynamic_loss(&pt, &flow.rotated(&t), &seg).unwrap().value;
        prop_assert!((a - b).abs() < 1e-9);
    }

    #[test]
    fn metrics_ignore_relabeling(pred in labels(40, 5), gt in labels(40, 4), shift in 1i64..100) {
        let m = seg_metrics(&pred, &gt).unwrap();
        let pred2: Vec<i64> = pred.iter().map(|l| (4 - l) * 7 + shift).collect();
        let gt2: Vec<i64> = gt.iter().map(|l| l * 3 + shift).collect();
        prop_assert_eq!(m, seg_metrics(&pred2, &gt2).unwrap());
        for v in [m.ap, m.pq, m.f1, m.precision, m.recall, m.miou, m.ri] {
            prop_assert!((0.0..=100.0).contains(&v));
        }
        prop_assert!(m.pq <= m.f1 + 1e-9);
    }

    #[test]
    fn rand_index_is_100_only_for_equal_partitions(pred in labels(12, 3), gt in labels(12, 3)) {
        let same = (0..12).all(|i| (0..12).all(|j| (pred[i] == pred[j]) == (gt[i] == gt[j])));
        let ri = seg_metrics(&pred, &gt).unwrap().ri;
        prop_assert_eq!(same, ri == 100.0);
    }

    #[test]
    fn flow_metrics_of_identical_fields(v in prop::collection::vec(vec3(), 1..30)) {
        let f = SceneFlow::new(v).unwrap();
        let m = flow_metrics(&f, &f).unwrap();
        prop_assert_eq!((m.epe3d, m.accs, m.accr, m.outlier), (0.0, 100.0, 100.0, 0.0));
    }

    #[test]
    fn baselines_ignore_translation(p in cloud(5..60), shift in vec3()) {
        let f: Vec<f64> = p.iter().flat_map(|x| [x.x, x.y, x.z]).collect();
        let g: Vec<f64> = p.iter().flat_map(|x| { let y = x + shift * 10.0; [y.x, y.y, y.z] }).collect();
        let cfg = DbscanConfig { eps: 0.3, min_points: 3 };
        prop_assert_eq!(dbscan(&f, 3, &cfg).unwrap(), dbscan(&g, 3, &cfg).unwrap());
        let w = WardConfig::TargetClusters(3);
        prop_assert_eq!(ward_linkage(&f, 3, &w).unwrap(), ward_linkage(&g, 3, &w).unwrap());
    }

    #[test]
    fn dbscan_ignores_rotation(p in cloud(5..60), t in transform()) {
        let f: Vec<f64> = p.iter().flat_map(|x| [x.x, x.y, x.z]).collect();
        let g: Vec<f64> = p.iter().flat_map(|x| { let y = t.apply(x); [y.x, y.y, y.z] }).collect();
        // keep neighbor distances away from the eps boundary
        let eps = 0.3;
        let near = p.iter().any(|a| p.iter().any(|b| ((a - b).norm() - eps).abs() < 1e-9));
        prop_assume!(!near);
        let cfg = DbscanConfig { eps, min_points: 3 };
        prop_assert_eq!(dbscan(&f, 3, &cfg).unwrap(), dbscan(&g, 3, &cfg).unwrap());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn generated_scenes_are_consistent(g in small_scene()) {
        let (w, d) = g.room;
        for f in 0..g.frames.len() {
            prop_assert_eq!(g.frames[f].len(), g.labels[f].len());
            for a in 0..g.num_objects() {
                let (lo, hi) = g.object_aabb(f, a);
                prop_assert!(lo.x >= 0.0 && lo.z >= 0.0 && hi.x <= w && hi.z <= d);
                for b in a + 1..g.num_objects() {
                    let (lb, hb) = g.object_aabb(f, b);
                    let overlap = (0..3).all(|c| lo[c] < hb[c] && lb[c] < hi[c]);
                    prop_assert!(!overlap);
                }
            }
        }
        for f in 0..g.frames.len() - 1 {
            prop_assert_eq!(g.gt_flows[f].len(), g.frames[f].len());
            for k in 0..g.num_objects() {
                let w: Vec<f64> = g.labels[f].iter().map(|&l| f64::from(u8::from(l as usize == k))).collect();
                let dst = g.frames[f].displaced(g.gt_flows[f].vectors()).unwrap();
                let fit = weighted_kabsch(&g.frames[f], &dst, &w).unwrap();
                let step = g.step_transform(f, k);
                prop_assert!((fit.rotation - step.rotation).norm() < 1e-9);
                prop_assert!((fit.translation - step.translation).norm() < 1e-9);
            }
        }
    }

    #[test]
    fn scene_files_round_trip(g in small_scene()) {
        let pair = g.pair("p", 0);
        let bytes = encode_scene(&pair).unwrap();
        let back = decode_scene("p", &bytes).unwrap();
        prop_assert_eq!(encode_scene(&back).unwrap(), bytes);
        prop_assert_eq!(back.gt_labels_t, pair.gt_labels_t);
        let close = |a: &[Vec3], b: &[Vec3]| a.iter().zip(b).all(|(x, y)| (x - y).norm() < 1e-6);
        prop_assert!(close(back.frame_t.points(), pair.frame_t.points()));
        prop_assert!(close(back.flow.vectors(), pair.flow.vectors()));
    }

    #[test]
    fn mask_files_round_trip(seg in segmentation(17, 5)) {
        let rec = MaskRecord { seg_t: seg.clone(), seg_t1: None };
        let bytes = encode_masks(&rec).unwrap();
        let back = decode_masks(&bytes).unwrap();
        prop_assert_eq!(encode_masks(&back).unwrap(), bytes);
        for i in 0..17 {
            for k in 0..5 {
                prop_assert!((back.seg_t.get(i, k) - seg.get(i, k)).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn icp_output_is_rigid_per_object(g in small_scene(), noise in 0.0..0.01f64, seed in 0u64..100) {
        let mut pair = g.pair("p", 0);
        pair.flow = rigidseg::scene_gen::add_flow_noise(&pair.flow, noise, seed).unwrap();
        let (s0, s1) = gt_masks(&g);
        let cfg = IcpConfig::with_iterations(3);
        let out = object_aware_icp(&pair, &s0, &s1, &cfg).unwrap();
        prop_assert_eq!(out.len(), pair.num_points());
        for k in 0..g.num_objects() {
            let w = s0.column(k);
            let dst = pair.frame_t.displaced(out.vectors()).unwrap();
            let t = weighted_kabsch(&pair.frame_t, &dst, &w).unwrap();
            for (i, p) in pair.frame_t.iter().enumerate() {
                if w[i] > 0.5 {
                    prop_assert!((t.apply(p) - dst[i]).norm() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn icp_is_equivariant(g in small_scene(), t in transform()) {
        let mut pair = g.pair("p", 0);
        pair.flow = rigidseg::scene_gen::add_flow_noise(&pair.flow, 0.003, 1).unwrap();
        let (s0, s1) = gt_masks(&g);
        let cfg = IcpConfig::with_iterations(3);
        let out = object_aware_icp(&pair, &s0, &s1, &cfg).unwrap();
        let moved = ScenePair::new(
            "q",
            PointCloud::new(pair.frame_t.iter().map(|x| t.apply(x)).collect()).unwrap(),
            PointCloud::new(pair.frame_t1.iter().map(|x| t.apply(x)).collect()).unwrap(),
            pair.flow.rotated(&t),
        ).unwrap();
        let out2 = object_aware_icp(&moved, &s0, &s1, &cfg).unwrap();
        for (a, b) in out.rotated(&t).vectors().iter().zip(out2.vectors()) {
            prop_assert!((a - b).norm() < 1e-6);
        }
    }

    #[test]
    fn rigidify_is_icp_without_correspondences(g in small_scene(), seed in 0u64..100) {
        let mut pair = g.pair("p", 0);
        pair.flow = rigidseg::scene_gen::add_flow_noise(&pair.flow, 0.01, seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let seg = SoftSegmentation::random(pair.num_points(), 4, 1.0, &mut rng).unwrap();
        let seg1 = SoftSegmentation::uniform(pair.frame_t1.len(), 4).unwrap();
        let cfg = IcpConfig { iterations: 1, correspondence_update: false, ..IcpConfig::default() };
        let a = object_aware_icp(&pair, &seg, &seg1, &cfg).unwrap();
        let b = rigidify_flow(&pair.frame_t, &pair.flow, &seg).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn alignment_never_lowers_total_iou(g in small_scene(), perm in Just((0..4).collect::<Vec<usize>>()).prop_shuffle()) {
        let pair = g.pair("p", 0);
        let k = 4;
        let lab = |l: &[u32]| l.iter().map(|&x| x as usize % k).collect::<Vec<_>>();
        let s0 = SoftSegmentation::one_hot(&lab(&g.labels[0]), k).unwrap();
        let s1 = SoftSegmentation::one_hot(&lab(&g.labels[1]), k).unwrap().permute_columns(&perm).unwrap();
        let aligned = align_frame_masks(&pair, &s0, &s1).unwrap();
        let transported = rigidseg::refine::transport_masks(&pair.warped(), &s0, &pair.frame_t1).unwrap();
        let diag = |b: &SoftSegmentation| {
            let iou = soft_iou_matrix(&transported, b).unwrap();
            (0..k).map(|c| iou[c * k + c]).sum::<f64>()
        };
        prop_assert!(diag(&aligned) >= diag(&s1) - 1e-12);
    }
}

fn gt_masks(g: &rigidseg::scene_gen::GeneratedScene) -> (SoftSegmentation, SoftSegmentation) {
    let k = g.num_objects();
    let oh = |l: &[u32]| SoftSegmentation::one_hot(&l.iter().map(|&x| x as usize).collect::<Vec<_>>(), k).unwrap();
    (oh(&g.labels[0]), oh(&g.labels[1]))
}
