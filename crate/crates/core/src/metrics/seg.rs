use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Result};
use crate::losses::hungarian;
use crate::masks::SoftSegmentation;

/// Class-agnostic instance segmentation scores, all in percent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SegMetrics {
    pub ap: f64,
    pub pq: f64,
    pub f1: f64,
    pub precision: f64,
    pub recall: f64,
    pub miou: f64,
    pub ri: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct SegOptions {
    /// Ground-truth label whose points are dropped before scoring.
    pub ignore_label: Option<i64>,
}

/// Instances and overlaps of one prediction/ground-truth pair.
#[derive(Debug, Clone)]
pub struct Overlaps {
    pub gt_ids: Vec<i64>,
    pub pred_ids: Vec<i64>,
    pub gt_sizes: Vec<usize>,
    pub pred_sizes: Vec<usize>,
    /// Row-major `gt × pred` intersection counts.
    pub intersections: Vec<usize>,
}

impl Overlaps {
    /// Negative predicted labels are unassigned points and form no instance.
    pub fn new(pred: &[i64], gt: &[i64]) -> Self {
        let gt_ids: Vec<i64> = gt.iter().copied().collect::<BTreeSet<_>>().into_iter().collect();
        let pred_ids: Vec<i64> = pred
            .iter()
            .copied()
            .filter(|p| *p >= 0)
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let gpos: BTreeMap<i64, usize> = gt_ids.iter().enumerate().map(|(i, g)| (*g, i)).collect();
        let ppos: BTreeMap<i64, usize> = pred_ids.iter().enumerate().map(|(i, p)| (*p, i)).collect();
        let (ng, np) = (gt_ids.len(), pred_ids.len());
        let mut gt_sizes = vec![0; ng];
        let mut pred_sizes = vec![0; np];
        let mut intersections = vec![0; ng * np];
        for (&p, &g) in pred.iter().zip(gt) {
            let gi = gpos[&g];
            gt_sizes[gi] += 1;
            if p >= 0 {
                let pi = ppos[&p];
                pred_sizes[pi] += 1;
                intersections[gi * np + pi] += 1;
            }
        }
        Self {
            gt_ids,
            pred_ids,
            gt_sizes,
            pred_sizes,
            intersections,
        }
    }

    pub fn iou(&self, g: usize, p: usize) -> f64 {
        let i = self.intersections[g * self.pred_ids.len() + p];
        let u = self.gt_sizes[g] + self.pred_sizes[p] - i;
        if u == 0 {
            0.0
        } else {
            i as f64 / u as f64
        }
    }
}

/// Scores hard labels; every predicted instance has the same confidence.
pub fn seg_metrics(pred: &[i64], gt: &[i64]) -> Result<SegMetrics> {
    seg_metrics_with(pred, gt, None, &SegOptions::default())
}

/// Scores the argmax labels of `seg`, ranking instances for AP by their mean
/// soft-mask probability.
pub fn seg_metrics_soft(seg: &SoftSegmentation, gt: &[i64], opts: &SegOptions) -> Result<SegMetrics> {
    let labels: Vec<i64> = seg.harden().into_iter().map(|l| l as i64).collect();
    let conf = instance_confidences(seg, &labels);
    seg_metrics_with(&labels, gt, Some(&conf), opts)
}

/// Mean probability of each label's own slot over its points, keyed by label.
pub fn instance_confidences(seg: &SoftSegmentation, labels: &[i64]) -> BTreeMap<i64, f64> {
    let mut acc: BTreeMap<i64, (f64, usize)> = BTreeMap::new();
    for (i, &l) in labels.iter().enumerate() {
        if l >= 0 {
            let e = acc.entry(l).or_insert((0.0, 0));
            e.0 += seg.get(i, l as usize);
            e.1 += 1;
        }
    }
    acc.into_iter().map(|(l, (s, c))| (l, s / c as f64)).collect()
}

/// Full form: optional per-label confidences and an ignore label.
pub fn seg_metrics_with(
    pred: &[i64],
    gt: &[i64],
    confidences: Option<&BTreeMap<i64, f64>>,
    opts: &SegOptions,
) -> Result<SegMetrics> {
    check_len("segmentation labels", gt.len(), pred.len())?;
    let (pred, gt): (Vec<i64>, Vec<i64>) = match opts.ignore_label {
        Some(ign) => pred.iter().zip(gt).filter(|(_, g)| **g != ign).map(|(p, g)| (*p, *g)).unzip(),
        None => (pred.to_vec(), gt.to_vec()),
    };
    let ov = Overlaps::new(&pred, &gt);
    let (ng, np) = (ov.gt_ids.len(), ov.pred_ids.len());
    let ri = rand_index(&pred, &gt);

    if ng == 0 {
        let hit = if np == 0 { 100.0 } else { 0.0 };
        return Ok(SegMetrics {
            ap: hit,
            pq: hit,
            f1: hit,
            precision: hit,
            recall: 100.0,
            miou: 100.0,
            ri,
        });
    }

    let mut tp = 0usize;
    let mut matched_iou = 0.0;
    for g in 0..ng {
        for p in 0..np {
            let iou = ov.iou(g, p);
            if iou > 0.5 {
                tp += 1;
                matched_iou += iou;
            }
        }
    }
    let (fp, fne) = (np - tp, ng - tp);
    let precision = if np == 0 { 0.0 } else { tp as f64 / np as f64 };
    let recall = tp as f64 / ng as f64;
    let f1 = 2.0 * tp as f64 / (np + ng) as f64;
    let pq_den = tp as f64 + 0.5 * fp as f64 + 0.5 * fne as f64;
    let pq = if pq_den > 0.0 { matched_iou / pq_den } else { 0.0 };

    let miou = if np == 0 {
        0.0
    } else {
        let cost: Vec<f64> = (0..ng)
            .flat_map(|g| (0..np).map(move |p| (g, p)))
            .map(|(g, p)| -ov.iou(g, p))
            .collect();
        hungarian(&cost, ng, np)
            .iter()
            .enumerate()
            .filter_map(|(g, p)| p.map(|p| ov.iou(g, p)))
            .sum::<f64>()
            / ng as f64
    };

    let conf: Vec<f64> = ov
        .pred_ids
        .iter()
        .map(|id| confidences.and_then(|c| c.get(id).copied()).unwrap_or(1.0))
        .collect();
    let ap = average_precision(&ov, &conf);

    Ok(SegMetrics {
        ap: 100.0 * ap,
        pq: 100.0 * pq,
        f1: 100.0 * f1,
        precision: 100.0 * precision,
        recall: 100.0 * recall,
        miou: 100.0 * miou,
        ri,
    })
}

/// COCO-style AP averaged over IoU thresholds 0.50:0.05:0.95 with
/// 101-point interpolation.
pub fn average_precision(ov: &Overlaps, confidence: &[f64]) -> f64 {
    let (ng, np) = (ov.gt_ids.len(), ov.pred_ids.len());
    if ng == 0 {
        return if np == 0 { 1.0 } else { 0.0 };
    }
    let mut order: Vec<usize> = (0..np).collect();
    order.sort_by(|&a, &b| confidence[b].total_cmp(&confidence[a]).then(a.cmp(&b)));
    let mut total = 0.0;
    for step in 0..10 {
        let thr = 0.5 + 0.05 * step as f64;
        let mut gt_used = vec![false; ng];
        let mut tp_flags = Vec::with_capacity(np);
        for &p in &order {
            let mut best: Option<(usize, f64)> = None;
            for (g, used) in gt_used.iter().enumerate() {
                let iou = ov.iou(g, p);
                if !used && iou >= thr - 1e-12 && best.is_none_or(|(_, b)| iou > b) {
                    best = Some((g, iou));
                }
            }
            if let Some((g, _)) = best {
                gt_used[g] = true;
            }
            tp_flags.push(best.is_some());
        }
        // equal confidences form one operating point
        let mut prec = Vec::with_capacity(np);
        let mut rec = Vec::with_capacity(np);
        let mut tp = 0usize;
        for (i, hit) in tp_flags.iter().enumerate() {
            tp += usize::from(*hit);
            let last_of_tie = i + 1 == np || confidence[order[i + 1]] != confidence[order[i]];
            if last_of_tie {
                prec.push(tp as f64 / (i + 1) as f64);
                rec.push(tp as f64 / ng as f64);
            }
        }
        for i in (0..prec.len().saturating_sub(1)).rev() {
            prec[i] = prec[i].max(prec[i + 1]);
        }
        let mut sum = 0.0;
        for r in 0..=100 {
            let r = r as f64 / 100.0;
            let idx = rec.partition_point(|x| *x < r - 1e-12);
            if idx < prec.len() {
                sum += prec[idx];
            }
        }
        total += sum / 101.0;
    }
    total / 10.0
}

/// Pair-counting agreement between two partitions, in percent. Every
/// negative predicted label is its own singleton.
pub fn rand_index(pred: &[i64], gt: &[i64]) -> f64 {
    let n = pred.len();
    if n < 2 {
        return 100.0;
    }
    let mut table: BTreeMap<(i64, i64), u64> = BTreeMap::new();
    let mut rows: BTreeMap<i64, u64> = BTreeMap::new();
    let mut cols: BTreeMap<i64, u64> = BTreeMap::new();
    let mut singletons = 0i64;
    for (&p, &g) in pred.iter().zip(gt) {
        let p = if p >= 0 {
            p
        } else {
            singletons += 1;
            // unique key below every real label
            i64::MIN + singletons
        };
        *table.entry((p, g)).or_default() += 1;
        *rows.entry(p).or_default() += 1;
        *cols.entry(g).or_default() += 1;
    }
    let c2 = |x: u64| x * x.saturating_sub(1) / 2;
    let total = c2(n as u64);
    let both: u64 = table.values().map(|v| c2(*v)).sum();
    let same_pred: u64 = rows.values().map(|v| c2(*v)).sum();
    let same_gt: u64 = cols.values().map(|v| c2(*v)).sum();
    let agree = total + 2 * both - same_pred - same_gt;
    100.0 * agree as f64 / total as f64
}
