use crate::error::{check_len, Error, Result};
use crate::geometry::{KabschFit, Mat3, PointCloud, RigidTransform, Vec3};
use crate::masks::SoftSegmentation;
use crate::scene::SceneFlow;

/// Value, logit gradient and per-slot fits of the dynamic rigid loss.
#[derive(Debug, Clone)]
pub struct DynamicLoss {
    pub value: f64,
    pub grad: Vec<f64>,
    pub transforms: Vec<RigidTransform>,
}

/// Mean per-point distance between the mask-blended rigid prediction
/// `Σ_k o_k (T_k∘p)` and the flow target `p + m`, where every `T_k` is the
/// weighted Kabsch fit of `(P, P+M)` under mask column `k`.
///
/// Empty masks fit the identity and contribute no gradient through the fit.
pub fn dynamic_loss(p: &PointCloud, flow: &SceneFlow, seg: &SoftSegmentation) -> Result<DynamicLoss> {
    let (value, grad_masks, transforms) = dynamic_loss_masks(p, flow, seg)?;
    Ok(DynamicLoss {
        value,
        grad: seg.softmax_backward(&grad_masks),
        transforms,
    })
}

/// Kabsch fit per slot; degenerate masks map to the identity (`None` fit).
pub(crate) fn fit_slots(
    src: &[Vec3],
    dst: &[Vec3],
    seg: &SoftSegmentation,
) -> Result<Vec<Option<KabschFit>>> {
    (0..seg.num_slots())
        .map(|k| match KabschFit::fit(src, dst, &seg.column(k)) {
            Ok(f) => Ok(Some(f)),
            Err(Error::DegenerateWeights { .. }) => Ok(None),
            Err(e) => Err(e),
        })
        .collect()
}

pub(crate) fn dynamic_loss_masks(
    p: &PointCloud,
    flow: &SceneFlow,
    seg: &SoftSegmentation,
) -> Result<(f64, Vec<f64>, Vec<RigidTransform>)> {
    let n = p.len();
    let k = seg.num_slots();
    check_len("dynamic loss flow", n, flow.len())?;
    check_len("dynamic loss masks", n, seg.num_points())?;

    let src = p.points();
    let dst: Vec<Vec3> = src.iter().zip(flow.vectors()).map(|(x, m)| x + m).collect();
    let fits = fit_slots(src, &dst, seg)?;
    let transforms: Vec<RigidTransform> = fits
        .iter()
        .map(|f| f.as_ref().map_or_else(RigidTransform::identity, |f| f.transform))
        .collect();

    let inv_n = 1.0 / n as f64;
    let mut value = 0.0;
    let mut grad = vec![0.0; n * k];
    let mut g_rot = vec![Mat3::zeros(); k];
    let mut g_trans = vec![Vec3::zeros(); k];
    let mut moved = vec![Vec3::zeros(); k];

    for i in 0..n {
        let row = seg.row(i);
        let mut pred = Vec3::zeros();
        for s in 0..k {
            moved[s] = transforms[s].apply(&src[i]);
            pred += row[s] * moved[s];
        }
        let r = pred - dst[i];
        let norm = r.norm();
        value += norm;
        if norm == 0.0 {
            continue;
        }
        let u = r / norm * inv_n;
        for s in 0..k {
            grad[i * k + s] += u.dot(&moved[s]);
            g_rot[s] += row[s] * u * src[i].transpose();
            g_trans[s] += row[s] * u;
        }
    }

    for (s, fit) in fits.iter().enumerate() {
        if let Some(fit) = fit {
            let gw = fit.backward(src, &dst, &g_rot[s], &g_trans[s]);
            for (i, g) in gw.into_iter().enumerate() {
                grad[i * k + s] += g;
            }
        }
    }

    Ok((value * inv_n, grad, transforms))
}
