//! Unsupervised segmentation objectives and their gradients with respect to
//! mask logits.
//!
//! * [`dynamic_loss`] asks every slot to move rigidly with the flow.
//! * [`smooth_loss`] asks nearby points to share their slot distribution.
//! * [`invariance_loss`] asks two views of one scene to agree up to a slot
//!   permutation found by [`match_masks`].

mod dynamic;
mod invariance;
mod matching;
mod smooth;

pub use dynamic::{dynamic_loss, DynamicLoss};
pub use invariance::{invariance_loss, InvarianceLoss};
pub use matching::{hungarian, match_masks, permutation_from_iou, soft_iou_matrix, MaskMatching};
pub use smooth::{
    scale_neighbors, smooth_loss, weighted_smooth_loss, Distance, LossValue, SmoothScale,
    SmoothnessConfig,
};

pub(crate) use dynamic::fit_slots;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{NeighborLists, PointCloud};
use crate::masks::SoftSegmentation;
use crate::scene::SceneFlow;

/// Coefficients of the combined objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub dynamic: f64,
    pub smooth: f64,
    pub invariant: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            dynamic: 10.0,
            smooth: 0.1,
            invariant: 0.1,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for w in [self.dynamic, self.smooth, self.invariant] {
            if !(w >= 0.0) || !w.is_finite() {
                return Err(Error::InvalidConfig(format!("loss weight {w} must be finite and >= 0")));
            }
        }
        Ok(())
    }
}

/// Unweighted component values of one evaluation.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossComponents {
    pub dynamic: f64,
    pub smooth: f64,
    pub invariant: f64,
}

/// Combined value with gradients for the main segmentation and for each view.
#[derive(Debug, Clone)]
pub struct CombinedLoss {
    pub value: f64,
    pub grad: Vec<f64>,
    pub view_grads: Option<(Vec<f64>, Vec<f64>)>,
    pub components: LossComponents,
}

/// `w_d·dynamic + w_s·smooth + w_i·invariant`.
///
/// The smoothness term uses the motion-weighted form when
/// `cfg.motion_temperature` is set. The invariance term needs `views`; it
/// is skipped, like any zero-weight term, otherwise.
pub fn combined_loss(
    p: &PointCloud,
    flow: &SceneFlow,
    seg: &SoftSegmentation,
    views: Option<(&SoftSegmentation, &SoftSegmentation)>,
    weights: &LossWeights,
    cfg: &SmoothnessConfig,
    neighbors: &[NeighborLists],
) -> Result<CombinedLoss> {
    let nk = seg.num_points() * seg.num_slots();
    let mut grad = vec![0.0; nk];
    let mut components = LossComponents::default();
    let mut value = 0.0;

    if weights.dynamic > 0.0 {
        let d = dynamic_loss(p, flow, seg)?;
        components.dynamic = d.value;
        value += weights.dynamic * d.value;
        axpy(&mut grad, weights.dynamic, &d.grad);
    }
    if weights.smooth > 0.0 {
        let s = match cfg.motion_temperature {
            Some(tau) => weighted_smooth_loss(p, flow, seg, cfg, tau, neighbors)?,
            None => smooth_loss(p, seg, cfg, neighbors)?,
        };
        components.smooth = s.value;
        value += weights.smooth * s.value;
        axpy(&mut grad, weights.smooth, &s.grad);
    }
    let mut view_grads = None;
    if weights.invariant > 0.0 {
        if let Some((a, b)) = views {
            let inv = invariance_loss(a, b)?;
            components.invariant = inv.value;
            value += weights.invariant * inv.value;
            let scale = |g: Vec<f64>| g.into_iter().map(|x| x * weights.invariant).collect();
            view_grads = Some((scale(inv.grad_a), scale(inv.grad_b)));
        }
    }
    Ok(CombinedLoss {
        value,
        grad,
        view_grads,
        components,
    })
}

fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    for (y, x) in y.iter_mut().zip(x) {
        *y += a * x;
    }
}
