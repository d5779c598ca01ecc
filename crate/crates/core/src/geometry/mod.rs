//! Rigid transforms, point clouds, weighted Kabsch fitting and exact
//! neighborhood queries.

mod kabsch;
mod spatial;

pub use kabsch::{
    degenerate_threshold, weighted_kabsch, weighted_kabsch_with_grad, KabschFit,
};
pub use spatial::{neighborhood_query, KdTree, NeighborLists, NeighborhoodSpec};
pub(crate) use spatial::neighborhood_query_with;

use nalgebra::{Matrix3, Rotation3, Unit, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;

/// A proper rigid motion `p -> rotation * p + translation`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RigidTransform {
    pub rotation: Mat3,
    pub translation: Vec3,
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self {
            rotation: Mat3::identity(),
            translation: Vec3::zeros(),
        }
    }

    pub fn new(rotation: Mat3, translation: Vec3) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    pub fn from_translation(translation: Vec3) -> Self {
        Self::new(Mat3::identity(), translation)
    }

    /// Rotation by `angle` radians about `axis`, no translation.
    pub fn from_axis_angle(axis: &Vec3, angle: f64) -> Self {
        let rot = Rotation3::from_axis_angle(&Unit::new_normalize(*axis), angle);
        Self::new(*rot.matrix(), Vec3::zeros())
    }

    /// Rotation about `pivot` followed by a translation.
    pub fn rotation_about(pivot: &Vec3, rotation: Mat3, translation: Vec3) -> Self {
        Self::new(rotation, pivot - rotation * pivot + translation)
    }

    #[inline]
    pub fn apply(&self, p: &Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        Self::new(rt, -(rt * self.translation))
    }

    /// `self ∘ other`: apply `other` first.
    pub fn compose(&self, other: &RigidTransform) -> Self {
        Self::new(
            self.rotation * other.rotation,
            self.rotation * other.translation + self.translation,
        )
    }

    /// Geodesic angle (radians) between the two rotations.
    pub fn rotation_angle_to(&self, other: &RigidTransform) -> f64 {
        let rel = self.rotation.transpose() * other.rotation;
        let c = ((rel.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
        c.acos()
    }

    /// Largest deviation of `RᵀR` from identity and of `det R` from one.
    pub fn orthonormality_error(&self) -> f64 {
        let e = (self.rotation.transpose() * self.rotation - Mat3::identity()).abs().max();
        e.max((self.rotation.determinant() - 1.0).abs())
    }
}

/// An ordered set of 3D points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointCloud {
    points: Vec<Vec3>,
}

impl PointCloud {
    pub fn new(points: Vec<Vec3>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::InvalidConfig("point cloud must hold at least one point".into()));
        }
        if points.iter().any(|p| !p.iter().all(|c| c.is_finite())) {
            return Err(Error::InvalidConfig("point cloud holds a non-finite coordinate".into()));
        }
        Ok(Self { points })
    }

    pub fn from_arrays(points: &[[f64; 3]]) -> Result<Self> {
        Self::new(points.iter().map(|p| Vec3::new(p[0], p[1], p[2])).collect())
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Vec3] {
        &self.points
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Vec3> {
        self.points.iter()
    }

    pub fn centroid(&self) -> Vec3 {
        self.points.iter().sum::<Vec3>() / self.points.len() as f64
    }

    /// Axis-aligned bounds `(min, max)`.
    pub fn bounds(&self) -> (Vec3, Vec3) {
        let mut lo = Vec3::repeat(f64::INFINITY);
        let mut hi = Vec3::repeat(f64::NEG_INFINITY);
        for p in &self.points {
            lo = lo.inf(p);
            hi = hi.sup(p);
        }
        (lo, hi)
    }

    /// Pointwise `self + flow`.
    pub fn displaced(&self, flow: &[Vec3]) -> Result<PointCloud> {
        crate::error::check_len("displaced", self.len(), flow.len())?;
        Ok(PointCloud {
            points: self.points.iter().zip(flow).map(|(p, m)| p + m).collect(),
        })
    }

    pub fn into_points(self) -> Vec<Vec3> {
        self.points
    }
}

impl std::ops::Index<usize> for PointCloud {
    type Output = Vec3;
    fn index(&self, i: usize) -> &Vec3 {
        &self.points[i]
    }
}

/// Applies `t` to every point, preserving order.
pub fn apply_transform(t: &RigidTransform, p: &PointCloud) -> PointCloud {
    PointCloud {
        points: p.points.iter().map(|x| t.apply(x)).collect(),
    }
}
