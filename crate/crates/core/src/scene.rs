//! Scene flow and the two-frame scene record shared by every stage.

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::geometry::{PointCloud, RigidTransform, Vec3};

/// Per-point displacement vectors aligned with a [`PointCloud`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneFlow {
    vectors: Vec<Vec3>,
}

impl SceneFlow {
    pub fn new(vectors: Vec<Vec3>) -> Result<Self> {
        if vectors.iter().any(|v| !v.iter().all(|c| c.is_finite())) {
            return Err(Error::InvalidConfig("scene flow holds a non-finite entry".into()));
        }
        Ok(Self { vectors })
    }

    pub fn zeros(n: usize) -> Self {
        Self {
            vectors: vec![Vec3::zeros(); n],
        }
    }

    /// Flow induced by moving `cloud` with `t`.
    pub fn from_transform(cloud: &PointCloud, t: &RigidTransform) -> Self {
        Self {
            vectors: cloud.iter().map(|p| t.apply(p) - p).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn vectors(&self) -> &[Vec3] {
        &self.vectors
    }

    pub fn into_vectors(self) -> Vec<Vec3> {
        self.vectors
    }

    pub fn mean_magnitude(&self) -> f64 {
        if self.vectors.is_empty() {
            return 0.0;
        }
        self.vectors.iter().map(|v| v.norm()).sum::<f64>() / self.vectors.len() as f64
    }

    /// Flow of the rigidly moved scene: `g∘(p+m) − g∘p = R·m`.
    pub fn rotated(&self, t: &RigidTransform) -> Self {
        Self {
            vectors: self.vectors.iter().map(|m| t.rotation * m).collect(),
        }
    }
}

impl std::ops::Index<usize> for SceneFlow {
    type Output = Vec3;
    fn index(&self, i: usize) -> &Vec3 {
        &self.vectors[i]
    }
}

/// Two consecutive frames with the flow of frame `t` and optional ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenePair {
    pub scene_id: String,
    pub frame_t: PointCloud,
    pub frame_t1: PointCloud,
    pub flow: SceneFlow,
    pub gt_labels_t: Option<Vec<u32>>,
    pub gt_labels_t1: Option<Vec<u32>>,
    pub gt_flow: Option<SceneFlow>,
}

impl ScenePair {
    pub fn new(
        scene_id: impl Into<String>,
        frame_t: PointCloud,
        frame_t1: PointCloud,
        flow: SceneFlow,
    ) -> Result<Self> {
        let s = Self {
            scene_id: scene_id.into(),
            frame_t,
            frame_t1,
            flow,
            gt_labels_t: None,
            gt_labels_t1: None,
            gt_flow: None,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        check_len("scene flow", self.frame_t.len(), self.flow.len())?;
        if let Some(l) = &self.gt_labels_t {
            check_len("frame t labels", self.frame_t.len(), l.len())?;
        }
        if let Some(l) = &self.gt_labels_t1 {
            check_len("frame t+1 labels", self.frame_t1.len(), l.len())?;
        }
        if let Some(f) = &self.gt_flow {
            check_len("ground-truth flow", self.frame_t.len(), f.len())?;
        }
        Ok(())
    }

    pub fn num_points(&self) -> usize {
        self.frame_t.len()
    }

    /// `frame_t + flow`.
    pub fn warped(&self) -> PointCloud {
        self.frame_t
            .displaced(self.flow.vectors())
            .expect("validated scene has aligned flow")
    }

    pub fn with_flow(&self, flow: SceneFlow) -> Result<Self> {
        check_len("scene flow", self.frame_t.len(), flow.len())?;
        Ok(Self {
            flow,
            ..self.clone()
        })
    }
}
