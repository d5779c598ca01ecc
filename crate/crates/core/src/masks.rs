//! Soft object masks: an `N×K` row-stochastic matrix parameterized by logits.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};

/// Per-point probability distributions over `K` object slots.
///
/// Both matrices are stored row-major (`n * k + slot`). `masks` is always the
/// row-wise softmax of `logits`, except when built with [`Self::from_masks`],
/// where the masks are kept verbatim and the logits are their logarithms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoftSegmentation {
    n: usize,
    k: usize,
    logits: Vec<f64>,
    masks: Vec<f64>,
}

const LOG_FLOOR: f64 = -700.0;

impl SoftSegmentation {
    pub fn from_logits(n: usize, k: usize, logits: Vec<f64>) -> Result<Self> {
        if k == 0 {
            return Err(Error::InvalidConfig("segmentation needs at least one slot".into()));
        }
        check_len("segmentation logits", n * k, logits.len())?;
        if logits.iter().any(|z| !z.is_finite()) {
            return Err(Error::InvalidConfig("non-finite logit".into()));
        }
        let mut masks = vec![0.0; n * k];
        for (row, out) in logits.chunks_exact(k).zip(masks.chunks_exact_mut(k)) {
            softmax_into(row, out);
        }
        Ok(Self { n, k, logits, masks })
    }

    /// Builds from explicit masks; each row must be a distribution.
    pub fn from_masks(n: usize, k: usize, masks: Vec<f64>) -> Result<Self> {
        if k == 0 {
            return Err(Error::InvalidConfig("segmentation needs at least one slot".into()));
        }
        check_len("segmentation masks", n * k, masks.len())?;
        for row in masks.chunks_exact(k) {
            let s: f64 = row.iter().sum();
            if row.iter().any(|m| !(0.0..=1.0).contains(m)) || (s - 1.0).abs() > 1e-6 {
                return Err(Error::InvalidConfig(format!(
                    "mask row must lie in [0,1] and sum to 1, got sum {s}"
                )));
            }
        }
        let logits = masks
            .iter()
            .map(|m| if *m > 0.0 { m.ln().max(LOG_FLOOR) } else { LOG_FLOOR })
            .collect();
        Ok(Self { n, k, logits, masks })
    }

    /// One-hot masks from integer labels in `0..k`.
    pub fn one_hot(labels: &[usize], k: usize) -> Result<Self> {
        let mut masks = vec![0.0; labels.len() * k];
        for (i, &l) in labels.iter().enumerate() {
            if l >= k {
                return Err(Error::InvalidConfig(format!("label {l} out of range for {k} slots")));
            }
            masks[i * k + l] = 1.0;
        }
        Self::from_masks(labels.len(), k, masks)
    }

    /// Uniform masks `1/k`.
    pub fn uniform(n: usize, k: usize) -> Result<Self> {
        Self::from_logits(n, k, vec![0.0; n * k])
    }

    /// I.i.d. Gaussian logits.
    pub fn random(n: usize, k: usize, std: f64, rng: &mut impl Rng) -> Result<Self> {
        let normal = Normal::new(0.0, std)
            .map_err(|e| Error::InvalidConfig(format!("logit std: {e}")))?;
        let logits = (0..n * k).map(|_| normal.sample(rng)).collect();
        Self::from_logits(n, k, logits)
    }

    pub fn num_points(&self) -> usize {
        self.n
    }

    pub fn num_slots(&self) -> usize {
        self.k
    }

    pub fn logits(&self) -> &[f64] {
        &self.logits
    }

    pub fn masks(&self) -> &[f64] {
        &self.masks
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.masks[i * self.k..(i + 1) * self.k]
    }

    #[inline]
    pub fn get(&self, i: usize, slot: usize) -> f64 {
        self.masks[i * self.k + slot]
    }

    /// Column `slot` as a length-N vector.
    pub fn column(&self, slot: usize) -> Vec<f64> {
        (0..self.n).map(|i| self.masks[i * self.k + slot]).collect()
    }

    /// New segmentation whose column `c` is column `perm[c]` of `self`.
    pub fn permute_columns(&self, perm: &[usize]) -> Result<Self> {
        check_len("column permutation", self.k, perm.len())?;
        let mut seen = vec![false; self.k];
        for &p in perm {
            if p >= self.k || std::mem::replace(&mut seen[p], true) {
                return Err(Error::InvalidConfig("not a permutation".into()));
            }
        }
        let mut logits = vec![0.0; self.n * self.k];
        let mut masks = vec![0.0; self.n * self.k];
        for i in 0..self.n {
            for (c, &p) in perm.iter().enumerate() {
                logits[i * self.k + c] = self.logits[i * self.k + p];
                masks[i * self.k + c] = self.masks[i * self.k + p];
            }
        }
        Ok(Self {
            n: self.n,
            k: self.k,
            logits,
            masks,
        })
    }

    /// Rows re-indexed: output row `i` is input row `index[i]`.
    pub fn gather_rows(&self, index: &[usize]) -> Self {
        let k = self.k;
        let mut logits = Vec::with_capacity(index.len() * k);
        let mut masks = Vec::with_capacity(index.len() * k);
        for &i in index {
            logits.extend_from_slice(&self.logits[i * k..(i + 1) * k]);
            masks.extend_from_slice(&self.masks[i * k..(i + 1) * k]);
        }
        Self {
            n: index.len(),
            k,
            logits,
            masks,
        }
    }

    /// Maps `∂L/∂masks` to `∂L/∂logits` through the row softmax.
    pub fn softmax_backward(&self, grad_masks: &[f64]) -> Vec<f64> {
        let k = self.k;
        let mut out = vec![0.0; grad_masks.len()];
        for ((o, g), dst) in self
            .masks
            .chunks_exact(k)
            .zip(grad_masks.chunks_exact(k))
            .zip(out.chunks_exact_mut(k))
        {
            let dot: f64 = o.iter().zip(g).map(|(a, b)| a * b).sum();
            for s in 0..k {
                dst[s] = o[s] * (g[s] - dot);
            }
        }
        out
    }

    /// Per-point argmax label; ties resolve to the lowest slot.
    pub fn harden(&self) -> Vec<usize> {
        harden(self)
    }

    /// Number of slots that win the argmax for at least one point.
    pub fn occupied_slots(&self) -> usize {
        let mut used = vec![false; self.k];
        for l in self.harden() {
            used[l] = true;
        }
        used.iter().filter(|u| **u).count()
    }
}

fn softmax_into(row: &[f64], out: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, z) in out.iter_mut().zip(row) {
        *o = (z - max).exp();
        sum += *o;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
}

/// Per-point argmax over slots, lowest slot on ties.
pub fn harden(seg: &SoftSegmentation) -> Vec<usize> {
    (0..seg.num_points())
        .map(|i| {
            let row = seg.row(i);
            let mut best = 0;
            for s in 1..row.len() {
                if row[s] > row[best] {
                    best = s;
                }
            }
            best
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn rows_are_distributions() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = SoftSegmentation::random(40, 5, 3.0, &mut rng).unwrap();
        for i in 0..40 {
            let r = s.row(i);
            assert!((r.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(r.iter().all(|m| (0.0..=1.0).contains(m)));
        }
    }

    #[test]
    fn harden_one_hot_and_ties() {
        let s = SoftSegmentation::one_hot(&[2, 0, 1, 2], 3).unwrap();
        assert_eq!(s.harden(), vec![2, 0, 1, 2]);
        let t = SoftSegmentation::from_masks(1, 2, vec![0.5, 0.5]).unwrap();
        assert_eq!(t.harden(), vec![0]);
    }

    #[test]
    fn harden_agrees_with_row_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let s = SoftSegmentation::random(100, 6, 1.0, &mut rng).unwrap();
        let labels = s.harden();
        for (i, l) in labels.iter().enumerate() {
            let row = s.row(i);
            let max = row.iter().cloned().fold(f64::MIN, f64::max);
            let first = row.iter().position(|v| *v == max).unwrap();
            assert_eq!(*l, first);
        }
    }

    #[test]
    fn one_hot_masks_survive_logit_round_trip() {
        let s = SoftSegmentation::one_hot(&[1, 0], 2).unwrap();
        let t = SoftSegmentation::from_logits(2, 2, s.logits().to_vec()).unwrap();
        for (x, y) in t.masks().iter().zip(s.masks()) {
            assert!((x - y).abs() < 1e-300);
        }
    }

    #[test]
    fn permutation_validation() {
        let s = SoftSegmentation::uniform(3, 3).unwrap();
        assert!(s.permute_columns(&[0, 0, 1]).is_err());
        assert!(s.permute_columns(&[2, 0, 1]).is_ok());
    }

    #[test]
    fn rejects_bad_rows() {
        assert!(SoftSegmentation::from_masks(1, 2, vec![0.7, 0.7]).is_err());
        assert!(SoftSegmentation::from_logits(1, 0, vec![]).is_err());
    }
}
