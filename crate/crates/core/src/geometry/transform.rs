use serde::{Deserialize, Serialize};

use super::{Mat3, Vec3};

/// Element of SE(3): `x ↦ R·x + t`.
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
    pub fn new(rotation: Mat3, translation: Vec3) -> Self {
        Self { rotation, translation }
    }

    pub fn identity() -> Self {
        Self { rotation: Mat3::identity(), translation: Vec3::zeros() }
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &RigidTransform) -> RigidTransform {
        RigidTransform {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> RigidTransform {
        let rt = self.rotation.transpose();
        RigidTransform { rotation: rt, translation: -(rt * self.translation) }
    }

    pub fn apply(&self, p: &Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }

    pub fn apply_all(&self, pts: &[Vec3]) -> Vec<Vec3> {
        pts.iter().map(|p| self.apply(p)).collect()
    }

    /// Camera-to-world pose of an OpenCV-convention camera (x right,
    /// y down, z forward) at `eye` looking at `target`, with `up` the
    /// world up direction.
    pub fn look_at(eye: &Vec3, target: &Vec3, up: &Vec3) -> RigidTransform {
        let forward = (target - eye).normalize();
        let right = forward.cross(up).normalize();
        let down = forward.cross(&right);
        RigidTransform { rotation: Mat3::from_columns(&[right, down, forward]), translation: *eye }
    }

    /// Max deviation from `RᵀR = I` and `det R = 1`.
    pub fn orthonormality_error(&self) -> f64 {
        let r = &self.rotation;
        let e = (r.transpose() * r - Mat3::identity()).abs().max();
        e.max((r.determinant() - 1.0).abs())
    }
}

/// `x ↦ s·R·x + t` with `s > 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimilarityTransform {
    pub scale: f64,
    pub rotation: Mat3,
    pub translation: Vec3,
}

impl SimilarityTransform {
    pub fn identity() -> Self {
        Self { scale: 1.0, rotation: Mat3::identity(), translation: Vec3::zeros() }
    }

    pub fn apply(&self, p: &Vec3) -> Vec3 {
        self.rotation * p * self.scale + self.translation
    }

    pub fn apply_all(&self, pts: &[Vec3]) -> Vec<Vec3> {
        pts.iter().map(|p| self.apply(p)).collect()
    }

    pub fn rigid(&self) -> RigidTransform {
        RigidTransform::new(self.rotation, self.translation)
    }
}

impl From<RigidTransform> for SimilarityTransform {
    fn from(t: RigidTransform) -> Self {
        SimilarityTransform { scale: 1.0, rotation: t.rotation, translation: t.translation }
    }
}
