use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::masks::SoftSegmentation;

/// Minimum-cost assignment on a row-major `rows × cols` matrix.
///
/// Returns, for every row, its assigned column. When `rows > cols` the
/// surplus rows get `None`. `O(n³)` shortest augmenting paths with potentials.
pub fn hungarian(cost: &[f64], rows: usize, cols: usize) -> Vec<Option<usize>> {
    assert_eq!(cost.len(), rows * cols, "cost matrix shape");
    if rows == 0 || cols == 0 {
        return vec![None; rows];
    }
    if rows > cols {
        let mut t = vec![0.0; rows * cols];
        for r in 0..rows {
            for c in 0..cols {
                t[c * rows + r] = cost[r * cols + c];
            }
        }
        let col_to_row = hungarian(&t, cols, rows);
        let mut out = vec![None; rows];
        for (c, r) in col_to_row.into_iter().enumerate() {
            if let Some(r) = r {
                out[r] = Some(c);
            }
        }
        return out;
    }

    // 1-based potentials formulation, rows <= cols
    let (n, m) = (rows, cols);
    let a = |i: usize, j: usize| cost[(i - 1) * m + (j - 1)];
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    let mut p = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=m {
                if !used[j] {
                    let cur = a(i0, j) - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut out = vec![None; n];
    for j in 1..=m {
        if p[j] != 0 {
            out[p[j] - 1] = Some(j - 1);
        }
    }
    out
}

/// Soft IoU between every column of `a` and every column of `b`:
/// `Σ_n min(a_nk, b_nl) / Σ_n max(a_nk, b_nl)`, zero when both columns are empty.
/// Row-major `K_a × K_b`.
pub fn soft_iou_matrix(a: &SoftSegmentation, b: &SoftSegmentation) -> Result<Vec<f64>> {
    check_len("mask matching points", a.num_points(), b.num_points())?;
    let (ka, kb) = (a.num_slots(), b.num_slots());
    let mut inter = vec![0.0; ka * kb];
    let mut union = vec![0.0; ka * kb];
    for i in 0..a.num_points() {
        let (ra, rb) = (a.row(i), b.row(i));
        for k in 0..ka {
            for l in 0..kb {
                inter[k * kb + l] += ra[k].min(rb[l]);
                union[k * kb + l] += ra[k].max(rb[l]);
            }
        }
    }
    Ok(inter
        .iter()
        .zip(&union)
        .map(|(i, u)| if *u > 0.0 { i / u } else { 0.0 })
        .collect())
}

/// One-to-one slot correspondence between two segmentations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskMatching {
    /// `permutation[c]` is the slot of `b` matched to slot `c` of `a`.
    pub permutation: Vec<usize>,
    pub total_iou: f64,
}

impl MaskMatching {
    /// `b` with its columns reordered into `a`'s slot order.
    pub fn reorder(&self, b: &SoftSegmentation) -> Result<SoftSegmentation> {
        b.permute_columns(&self.permutation)
    }
}

/// Best total of `iou` over bijections restricted to the given rows/cols.
fn best_total(iou: &[f64], k: usize, rows: &[usize], cols: &[usize]) -> f64 {
    let r = rows.len();
    let cost: Vec<f64> = rows
        .iter()
        .flat_map(|&i| cols.iter().map(move |&j| -iou[i * k + j]))
        .collect();
    hungarian(&cost, r, r)
        .iter()
        .enumerate()
        .map(|(ri, c)| iou[rows[ri] * k + cols[c.expect("square")]])
        .sum()
}

/// Maximum-IoU permutation, ties resolved to the lexicographically smallest.
pub fn permutation_from_iou(iou: &[f64], k: usize) -> MaskMatching {
    assert_eq!(iou.len(), k * k, "iou matrix shape");
    let all: Vec<usize> = (0..k).collect();
    let best = best_total(iou, k, &all, &all);
    let tol = 1e-12 * k as f64 * best.abs().max(1.0);

    let mut perm = Vec::with_capacity(k);
    let mut free: Vec<usize> = all.clone();
    let mut fixed = 0.0;
    for c in 0..k {
        let rest_rows: Vec<usize> = (c + 1..k).collect();
        let mut chosen = None;
        for (pos, &l) in free.iter().enumerate() {
            let rest_cols: Vec<usize> = free.iter().copied().filter(|&x| x != l).collect();
            let total = fixed + iou[c * k + l] + best_total(iou, k, &rest_rows, &rest_cols);
            if total >= best - tol {
                chosen = Some(pos);
                break;
            }
        }
        // some candidate always reaches the optimum; fall back to the first defensively
        let pos = chosen.unwrap_or(0);
        let l = free.remove(pos);
        fixed += iou[c * k + l];
        perm.push(l);
    }
    MaskMatching {
        permutation: perm,
        total_iou: fixed,
    }
}

/// Matches the slots of `b` to those of `a` by maximizing total soft IoU.
pub fn match_masks(a: &SoftSegmentation, b: &SoftSegmentation) -> Result<MaskMatching> {
    check_len("mask matching points", a.num_points(), b.num_points())?;
    if a.num_slots() != b.num_slots() {
        return Err(Error::DimensionMismatch {
            context: "mask matching slots".into(),
            expected: a.num_slots(),
            actual: b.num_slots(),
        });
    }
    let iou = soft_iou_matrix(a, b)?;
    Ok(permutation_from_iou(&iou, a.num_slots()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn permutations(k: usize) -> Vec<Vec<usize>> {
        if k == 0 {
            return vec![vec![]];
        }
        let mut out = Vec::new();
        for p in permutations(k - 1) {
            for pos in 0..=p.len() {
                let mut q = p.clone();
                q.insert(pos, k - 1);
                out.push(q);
            }
        }
        out
    }

    #[test]
    fn hungarian_matches_exhaustive_search() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let k = rng.random_range(1..=6);
            let cost: Vec<f64> = (0..k * k).map(|_| rng.random()).collect();
            let got = hungarian(&cost, k, k);
            let got_cost: f64 = got.iter().enumerate().map(|(r, c)| cost[r * k + c.unwrap()]).sum();
            let brute = permutations(k)
                .iter()
                .map(|p| p.iter().enumerate().map(|(r, c)| cost[r * k + c]).sum::<f64>())
                .fold(f64::INFINITY, f64::min);
            assert_eq!(got_cost, brute);
        }
    }

    #[test]
    fn rectangular_assignment() {
        // 2 rows, 3 cols and its transpose
        let cost = [5.0, 1.0, 9.0, 2.0, 8.0, 0.5];
        assert_eq!(hungarian(&cost, 2, 3), vec![Some(1), Some(2)]);
        let t = [5.0, 2.0, 1.0, 8.0, 9.0, 0.5];
        assert_eq!(hungarian(&t, 3, 2), vec![None, Some(0), Some(1)]);
    }

    #[test]
    fn identical_masks_match_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = SoftSegmentation::random(30, 4, 2.0, &mut rng).unwrap();
        assert_eq!(match_masks(&a, &a).unwrap().permutation, vec![0, 1, 2, 3]);
    }

    #[test]
    fn swapped_columns_give_transposition() {
        let a = SoftSegmentation::one_hot(&[0, 0, 1, 2, 1], 3).unwrap();
        let b = a.permute_columns(&[1, 0, 2]).unwrap();
        let m = match_masks(&a, &b).unwrap();
        assert_eq!(m.permutation, vec![1, 0, 2]);
        assert_eq!(m.reorder(&b).unwrap().masks(), a.masks());
    }

    #[test]
    fn ties_resolve_lexicographically() {
        // uniform masks: every permutation has the same total
        let a = SoftSegmentation::uniform(5, 4).unwrap();
        assert_eq!(match_masks(&a, &a).unwrap().permutation, vec![0, 1, 2, 3]);
        // two empty columns in b tie with each other
        let a = SoftSegmentation::one_hot(&[0, 1, 1], 4).unwrap();
        let b = SoftSegmentation::one_hot(&[3, 2, 2], 4).unwrap();
        assert_eq!(match_masks(&a, &b).unwrap().permutation, vec![3, 2, 0, 1]);
    }

    #[test]
    fn soft_iou_on_one_hot_is_set_iou() {
        let a = SoftSegmentation::one_hot(&[0, 0, 0, 1], 2).unwrap();
        let b = SoftSegmentation::one_hot(&[0, 0, 1, 1], 2).unwrap();
        let iou = soft_iou_matrix(&a, &b).unwrap();
        assert!((iou[0] - 2.0 / 3.0).abs() < 1e-15);
        assert!((iou[3] - 0.5).abs() < 1e-15);
    }
}
