//! Weighted Kabsch fitting with reverse-mode gradients w.r.t. the weights.
//!
//! Minimizes `Σ_i w_i ‖R·src_i + t − dst_i‖²` over proper rotations. With
//! `M = Σ_i w_i (dst_i − c_dst)(src_i − c_src)ᵀ = U S Vᵀ` the minimizer is
//! `R = U diag(1, 1, d) Vᵀ` where `d = sign det(U Vᵀ)`.
//!
//! The backward pass differentiates the polar factor: at the optimum
//! `P = Rᵀ M = V diag(σ') Vᵀ` is symmetric, so a perturbation `dM` induces
//! `dR = R Ω` with `Ω` skew and `Vᵀ Ω V = (Vᵀ (A − Aᵀ) V) ⊘ (σ'_i + σ'_j)`,
//! `A = Rᵀ dM`.

use nalgebra::Unit;

use super::{Mat3, PointCloud, RigidTransform, Vec3};
use crate::error::{check_len, Error, Result};

/// Total weight below which a fit is reported as degenerate.
pub fn degenerate_threshold(n: usize) -> f64 {
    1e-6 * n as f64
}

const SPECTRAL_EPS: f64 = 1e-12;

/// A weighted Kabsch solution plus the intermediates its backward pass needs.
#[derive(Debug, Clone)]
pub struct KabschFit {
    pub transform: RigidTransform,
    centroid_src: Vec3,
    centroid_dst: Vec3,
    total_weight: f64,
    /// Right singular vectors of `M` (columns), eigenbasis of `Rᵀ M`.
    basis: Mat3,
    /// Eigenvalues of `Rᵀ M` in `basis` order (sign-corrected singular values).
    spectrum: Vec3,
}

impl KabschFit {
    pub fn fit(src: &[Vec3], dst: &[Vec3], weights: &[f64]) -> Result<Self> {
        check_len("weighted_kabsch dst", src.len(), dst.len())?;
        check_len("weighted_kabsch weights", src.len(), weights.len())?;
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::InvalidConfig(
                "kabsch weights must be finite and nonnegative".into(),
            ));
        }
        let total: f64 = weights.iter().sum();
        let threshold = degenerate_threshold(src.len());
        if !(total >= threshold) || total <= 0.0 {
            return Err(Error::DegenerateWeights { total, threshold });
        }

        let mut cs = Vec3::zeros();
        let mut cd = Vec3::zeros();
        for ((x, y), w) in src.iter().zip(dst).zip(weights) {
            cs += *w * x;
            cd += *w * y;
        }
        cs /= total;
        cd /= total;

        let mut m = Mat3::zeros();
        for ((x, y), w) in src.iter().zip(dst).zip(weights) {
            m += *w * (y - cd) * (x - cs).transpose();
        }

        let (rotation, basis, spectrum) = polar_rotation(&m);
        let translation = cd - rotation * cs;
        Ok(Self {
            transform: RigidTransform::new(rotation, translation),
            centroid_src: cs,
            centroid_dst: cd,
            total_weight: total,
            basis,
            spectrum,
        })
    }

    /// Pulls `∂L/∂R` and `∂L/∂t` back to `∂L/∂w_i`.
    pub fn backward(
        &self,
        src: &[Vec3],
        dst: &[Vec3],
        grad_rotation: &Mat3,
        grad_translation: &Vec3,
    ) -> Vec<f64> {
        let r = &self.transform.rotation;
        let g_r = grad_rotation - grad_translation * self.centroid_src.transpose();
        let g_cd = *grad_translation;
        let g_cs = -(r.transpose() * grad_translation);

        let b = self.basis.transpose() * (r.transpose() * g_r) * self.basis;
        let scale = self.spectrum.amax().max(1.0);
        let mut c = Mat3::zeros();
        for i in 0..3 {
            for j in 0..3 {
                let denom = self.spectrum[i] + self.spectrum[j];
                if i != j && denom.abs() > SPECTRAL_EPS * scale {
                    c[(i, j)] = b[(i, j)] / denom;
                }
            }
        }
        let d = self.basis * c * self.basis.transpose();
        let g_m = r * (d - d.transpose());

        let inv_w = 1.0 / self.total_weight;
        src.iter()
            .zip(dst)
            .map(|(x, y)| {
                let a = y - self.centroid_dst;
                let bx = x - self.centroid_src;
                a.dot(&(g_m * bx)) + inv_w * (g_cs.dot(&bx) + g_cd.dot(&a))
            })
            .collect()
    }
}

/// Rotation maximizing `tr(Rᵀ M)`, with the eigenbasis and spectrum of `Rᵀ M`.
fn polar_rotation(m: &Mat3) -> (Mat3, Mat3, Vec3) {
    let svd = m.svd(true, true);
    let u0 = svd.u.expect("svd computed with u");
    let vt0 = svd.v_t.expect("svd computed with v_t");
    let s0 = svd.singular_values;

    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| s0[b].total_cmp(&s0[a]));
    let mut u = Mat3::zeros();
    let mut v = Mat3::zeros();
    let mut s = Vec3::zeros();
    for (dst, &src) in order.iter().enumerate() {
        u.set_column(dst, &u0.column(src));
        v.set_column(dst, &vt0.row(src).transpose());
        s[dst] = s0[src];
    }

    let scale = s[0].max(f64::MIN_POSITIVE);
    if s[0] <= 1e-300 {
        return (Mat3::identity(), Mat3::identity(), Vec3::zeros());
    }
    if s[1] <= 1e-10 * scale {
        // Rank one: the smallest rotation taking the source axis onto the target axis.
        let from = v.column(0).into_owned();
        let to = u.column(0).into_owned();
        let rot = minimal_rotation(&from, &to);
        let p = rot.transpose() * m;
        let sym = 0.5 * (p + p.transpose());
        let eig = sym.symmetric_eigen();
        return (rot, eig.eigenvectors, eig.eigenvalues);
    }

    let det = (u * v.transpose()).determinant();
    let d = if det < 0.0 { -1.0 } else { 1.0 };
    let mut u_fixed = u;
    u_fixed.set_column(2, &(u.column(2) * d));
    let rot = u_fixed * v.transpose();
    (rot, v, Vec3::new(s[0], s[1], d * s[2]))
}

fn minimal_rotation(from: &Vec3, to: &Vec3) -> Mat3 {
    let c = from.dot(to).clamp(-1.0, 1.0);
    let axis = from.cross(to);
    let sn = axis.norm();
    if sn < 1e-15 {
        if c > 0.0 {
            return Mat3::identity();
        }
        // Antiparallel: half turn about any axis orthogonal to `from`.
        let helper = if from.x.abs() < 0.9 { Vec3::x() } else { Vec3::y() };
        let ortho = Unit::new_normalize(from.cross(&helper));
        return *nalgebra::Rotation3::from_axis_angle(&ortho, std::f64::consts::PI).matrix();
    }
    *nalgebra::Rotation3::from_axis_angle(&Unit::new_normalize(axis), sn.atan2(c)).matrix()
}

/// Weighted least-squares rigid fit of `src` onto `dst`.
///
/// Fails with [`Error::DegenerateWeights`] when `Σw < 1e-6·N`; callers that
/// treat an empty mask as static substitute the identity.
pub fn weighted_kabsch(
    src: &PointCloud,
    dst: &PointCloud,
    weights: &[f64],
) -> Result<RigidTransform> {
    KabschFit::fit(src.points(), dst.points(), weights).map(|f| f.transform)
}

/// As [`weighted_kabsch`], keeping the state needed for gradients.
pub fn weighted_kabsch_with_grad(
    src: &PointCloud,
    dst: &PointCloud,
    weights: &[f64],
) -> Result<KabschFit> {
    KabschFit::fit(src.points(), dst.points(), weights)
}
