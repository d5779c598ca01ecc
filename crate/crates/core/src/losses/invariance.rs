use crate::error::{Error, Result};
use crate::masks::SoftSegmentation;

use super::matching::{match_masks, MaskMatching};

/// Value and logit gradients of the two-view invariance loss.
#[derive(Debug, Clone)]
pub struct InvarianceLoss {
    pub value: f64,
    pub grad_a: Vec<f64>,
    pub grad_b: Vec<f64>,
    pub matching: MaskMatching,
}

/// Mean Euclidean distance between the rows of `a` and the rows of `b`
/// after `b`'s slots are matched to `a`'s. The matching is held fixed when
/// differentiating.
pub fn invariance_loss(a: &SoftSegmentation, b: &SoftSegmentation) -> Result<InvarianceLoss> {
    let matching = match_masks(a, b)?;
    let (value, ga, gb) = invariance_masks(a, b, &matching.permutation)?;
    Ok(InvarianceLoss {
        value,
        grad_a: a.softmax_backward(&ga),
        grad_b: b.softmax_backward(&gb),
        matching,
    })
}

/// Mask-space value and gradients for a fixed permutation.
pub(crate) fn invariance_masks(
    a: &SoftSegmentation,
    b: &SoftSegmentation,
    perm: &[usize],
) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    let (n, k) = (a.num_points(), a.num_slots());
    if b.num_points() != n || b.num_slots() != k || perm.len() != k {
        return Err(Error::DimensionMismatch {
            context: "invariance loss".into(),
            expected: n * k,
            actual: b.num_points() * b.num_slots(),
        });
    }
    let inv_n = 1.0 / n as f64;
    let mut ga = vec![0.0; n * k];
    let mut gb = vec![0.0; n * k];
    let mut value = 0.0;
    let mut diff = vec![0.0; k];
    for i in 0..n {
        let (ra, rb) = (a.row(i), b.row(i));
        for c in 0..k {
            diff[c] = ra[c] - rb[perm[c]];
        }
        let d = diff.iter().map(|x| x * x).sum::<f64>().sqrt();
        value += d;
        if d > 0.0 {
            for c in 0..k {
                let g = diff[c] / d * inv_n;
                ga[i * k + c] += g;
                gb[i * k + perm[c]] -= g;
            }
        }
    }
    Ok((value * inv_n, ga, gb))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn equal_views_give_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let a = SoftSegmentation::random(20, 3, 1.0, &mut rng).unwrap();
        assert_eq!(invariance_loss(&a, &a).unwrap().value, 0.0);
        let b = a.permute_columns(&[2, 0, 1]).unwrap();
        assert!(invariance_loss(&a, &b).unwrap().value < 1e-15);
    }

    #[test]
    fn hand_example() {
        let a = SoftSegmentation::one_hot(&[0, 1], 2).unwrap();
        let b = SoftSegmentation::uniform(2, 2).unwrap();
        let v = invariance_loss(&a, &b).unwrap().value;
        assert!((v - 0.5f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn symmetric_in_arguments() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let a = SoftSegmentation::random(40, 4, 2.0, &mut rng).unwrap();
        let b = SoftSegmentation::random(40, 4, 2.0, &mut rng).unwrap();
        let ab = invariance_loss(&a, &b).unwrap().value;
        let ba = invariance_loss(&b, &a).unwrap().value;
        assert!((ab - ba).abs() < 1e-9);
    }
}
