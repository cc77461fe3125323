use serde::{Deserialize, Serialize};

use super::{Vec2, Vec3};
use crate::{Error, Result};

/// Pinhole intrinsics in pixels. Pixel `(col, row)` covers
/// `[col, col+1) × [row, row+1)`; its center is at `(col+0.5, row+0.5)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64) -> Result<Self> {
        if !(fx > 0.0 && fy > 0.0) || !cx.is_finite() || !cy.is_finite() {
            return Err(Error::InvalidInput(format!("focal lengths must be positive, got ({fx}, {fy})")));
        }
        Ok(Self { fx, fy, cx, cy })
    }

    /// Square image of side `res` with focal length `focal_ratio · res`.
    pub fn centered(res: usize, focal_ratio: f64) -> Self {
        let f = focal_ratio * res as f64;
        let c = res as f64 * 0.5;
        Self { fx: f, fy: f, cx: c, cy: c }
    }
}

/// `u = fx·x/z + cx`, `v = fy·y/z + cy` without the `z > 0` check.
pub fn project_point(k: &CameraIntrinsics, p: &Vec3) -> Vec2 {
    Vec2::new(k.fx * p.x / p.z + k.cx, k.fy * p.y / p.z + k.cy)
}

pub fn project_points(k: &CameraIntrinsics, pts: &[Vec3]) -> Result<Vec<Vec2>> {
    let behind: Vec<usize> = pts.iter().enumerate().filter(|(_, p)| !(p.z > 0.0)).map(|(i, _)| i).collect();
    if !behind.is_empty() {
        return Err(Error::BehindCamera(behind));
    }
    Ok(pts.iter().map(|p| project_point(k, p)).collect())
}

/// Inverse of [`project_point`] given the z-depth.
pub fn back_project(k: &CameraIntrinsics, uv: &Vec2, depth: f64) -> Vec3 {
    Vec3::new((uv.x - k.cx) / k.fx * depth, (uv.y - k.cy) / k.fy * depth, depth)
}

/// Per-pixel 3D points (row-major) with a validity mask.
#[derive(Debug, Clone, PartialEq)]
pub struct PointMap {
    pub width: usize,
    pub height: usize,
    pub points: Vec<Vec3>,
    pub valid: Vec<bool>,
}

impl PointMap {
    /// Back-projects a z-depth map sampled at pixel centers. Depth `<= 0`
    /// or non-finite marks the pixel invalid.
    pub fn from_depth(k: &CameraIntrinsics, depth: &[f32], width: usize, height: usize) -> Self {
        assert_eq!(depth.len(), width * height, "depth map size");
        let mut points = Vec::with_capacity(depth.len());
        let mut valid = Vec::with_capacity(depth.len());
        for row in 0..height {
            for col in 0..width {
                let d = depth[row * width + col] as f64;
                if d > 0.0 && d.is_finite() {
                    let uv = Vec2::new(col as f64 + 0.5, row as f64 + 0.5);
                    points.push(back_project(k, &uv, d));
                    valid.push(true);
                } else {
                    points.push(Vec3::zeros());
                    valid.push(false);
                }
            }
        }
        Self { width, height, points, valid }
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|v| **v).count()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{Matrix3x4, Vector4};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn optical_axis_hits_principal_point() {
        let k = CameraIntrinsics::new(100.0, 100.0, 64.0, 60.0).unwrap();
        let uv = project_points(&k, &[Vec3::new(0.0, 0.0, 1.0)]).unwrap();
        assert_eq!(uv[0], Vec2::new(64.0, 60.0));
        let uv = project_points(&k, &[Vec3::new(0.1, 0.0, 1.0)]).unwrap();
        assert!((uv[0].x - 74.0).abs() < 1e-12);
    }

    #[test]
    fn behind_camera_lists_indices() {
        let k = CameraIntrinsics::centered(64, 1.0);
        let pts = [Vec3::new(0.0, 0.0, 1.0), Vec3::new(0.0, 0.0, -1.0), Vec3::new(1.0, 0.0, 0.0)];
        assert_eq!(project_points(&k, &pts), Err(Error::BehindCamera(vec![1, 2])));
    }

    #[test]
    fn matches_homogeneous_projection_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let k = CameraIntrinsics::new(115.2, 109.0, 64.3, 61.7).unwrap();
        #[rustfmt::skip]
        let p = Matrix3x4::new(
            k.fx, 0.0, k.cx, 0.0,
            0.0, k.fy, k.cy, 0.0,
            0.0, 0.0, 1.0, 0.0,
        );
        for _ in 0..500 {
            let x = Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(0.1..3.0));
            let h = p * Vector4::new(x.x, x.y, x.z, 1.0);
            let uv = project_points(&k, &[x]).unwrap()[0];
            assert!((uv.x - h.x / h.z).abs() < 1e-12);
            assert!((uv.y - h.y / h.z).abs() < 1e-12);
            let back = back_project(&k, &uv, x.z);
            assert!((back - x).norm() < 1e-9);
        }
    }

    #[test]
    fn invalid_intrinsics_rejected() {
        assert!(CameraIntrinsics::new(0.0, 1.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn pointmap_from_depth_marks_invalid() {
        let k = CameraIntrinsics::centered(2, 1.0);
        let pm = PointMap::from_depth(&k, &[1.0, 0.0, 2.0, f32::NAN], 2, 2);
        assert_eq!(pm.valid, vec![true, false, true, false]);
        assert_eq!(pm.points[2].z, 2.0);
    }
}
