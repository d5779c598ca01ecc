use serde::{Deserialize, Serialize};

use crate::error::{check_len, Result};
use crate::scene::SceneFlow;

/// Scene-flow accuracy. `epe3d` is in scene units, the rest in percent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlowMetrics {
    pub epe3d: f64,
    pub accs: f64,
    pub accr: f64,
    pub outlier: f64,
}

/// End-point error and the strict/relaxed accuracy and outlier rates:
/// AccS counts `epe < 0.05 or rel < 5%`, AccR `epe < 0.1 or rel < 10%`,
/// Outlier `epe > 0.3 or rel > 10%`.
pub fn flow_metrics(pred: &SceneFlow, gt: &SceneFlow) -> Result<FlowMetrics> {
    check_len("flow metrics", gt.len(), pred.len())?;
    let n = gt.len();
    if n == 0 {
        return Ok(FlowMetrics {
            epe3d: 0.0,
            accs: 100.0,
            accr: 100.0,
            outlier: 0.0,
        });
    }
    let (mut epe_sum, mut accs, mut accr, mut outlier) = (0.0, 0usize, 0usize, 0usize);
    for (p, g) in pred.vectors().iter().zip(gt.vectors()) {
        let epe = (p - g).norm();
        let gn = g.norm();
        let rel = if gn > 0.0 {
            epe / gn
        } else if epe == 0.0 {
            0.0
        } else {
            f64::INFINITY
        };
        epe_sum += epe;
        accs += usize::from(epe < 0.05 || rel < 0.05);
        accr += usize::from(epe < 0.1 || rel < 0.1);
        outlier += usize::from(epe > 0.3 || rel > 0.1);
    }
    let pct = |c: usize| 100.0 * c as f64 / n as f64;
    Ok(FlowMetrics {
        epe3d: epe_sum / n as f64,
        accs: pct(accs),
        accr: pct(accr),
        outlier: pct(outlier),
    })
}
