use hand3r_core::geometry::Vec3;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Axis-aligned box resting in the world.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxPrim {
    pub min: Vec3,
    pub max: Vec3,
    pub color: [f32; 3],
}

/// Static desk scene in a z-up world: a checkerboard ground square at
/// `z = 0` with half-size `extent`, plus boxes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub extent: f64,
    pub checker_size: f64,
    pub ground_colors: [[f32; 3]; 2],
    pub boxes: Vec<BoxPrim>,
}

/// First surface hit along a ray.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hit {
    /// Ray parameter of the hit.
    pub t: f64,
    pub point: Vec3,
    pub normal: Vec3,
    pub color: [f32; 3],
    /// `None` for the ground, otherwise the box index.
    pub primitive: Option<usize>,
}

const LIGHT: [f64; 3] = [0.3, -0.5, 0.81];

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.extent > 0.0 && self.checker_size > 0.0) {
            return Err(Error::InvalidArgument("scene extents must be positive".into()));
        }
        for (i, b) in self.boxes.iter().enumerate() {
            if (b.max - b.min).iter().any(|d| !(*d > 0.0)) {
                return Err(Error::InvalidArgument(format!("box {i} has non-positive extent")));
            }
        }
        Ok(())
    }

    pub fn contains(&self, p: &Vec3) -> bool {
        p.x.abs() <= self.extent && p.y.abs() <= self.extent && p.z >= 0.0
    }

    /// Nearest hit with `t > 0` along `origin + t·dir` (`dir` need not be unit).
    pub fn intersect(&self, origin: &Vec3, dir: &Vec3) -> Option<Hit> {
        let mut best: Option<Hit> = None;
        if dir.z < 0.0 && origin.z > 0.0 {
            let t = -origin.z / dir.z;
            let p = origin + dir * t;
            if p.x.abs() <= self.extent && p.y.abs() <= self.extent {
                let parity = ((p.x / self.checker_size).floor() + (p.y / self.checker_size).floor()) as i64;
                let color = self.ground_colors[parity.rem_euclid(2) as usize];
                best = Some(Hit { t, point: p, normal: Vec3::z(), color, primitive: None });
            }
        }
        for (i, b) in self.boxes.iter().enumerate() {
            if let Some((t, normal)) = ray_box(origin, dir, b) {
                if best.map_or(true, |h| t < h.t) {
                    best = Some(Hit { t, point: origin + dir * t, normal, color: b.color, primitive: Some(i) });
                }
            }
        }
        best
    }

    /// Lambert-style shaded color of a hit.
    pub fn shade(hit: &Hit) -> [f32; 3] {
        let light = Vec3::from(LIGHT).normalize();
        let k = (0.55 + 0.45 * hit.normal.dot(&light).abs()) as f32;
        hit.color.map(|c| c * k)
    }

    /// Distance from `p` to the nearest primitive surface.
    pub fn surface_distance(&self, p: &Vec3) -> f64 {
        let mut d = if p.x.abs() <= self.extent && p.y.abs() <= self.extent { p.z.abs() } else { f64::INFINITY };
        for b in &self.boxes {
            d = d.min(box_surface_distance(p, b));
        }
        d
    }
}

fn ray_box(origin: &Vec3, dir: &Vec3, b: &BoxPrim) -> Option<(f64, Vec3)> {
    let mut t0 = f64::NEG_INFINITY;
    let mut t1 = f64::INFINITY;
    let mut axis = 0;
    let mut sign = 1.0;
    for k in 0..3 {
        if dir[k] == 0.0 {
            if origin[k] < b.min[k] || origin[k] > b.max[k] {
                return None;
            }
            continue;
        }
        let (mut a, mut c) = ((b.min[k] - origin[k]) / dir[k], (b.max[k] - origin[k]) / dir[k]);
        let mut s = -1.0;
        if a > c {
            std::mem::swap(&mut a, &mut c);
            s = 1.0;
        }
        if a > t0 {
            t0 = a;
            axis = k;
            sign = s;
        }
        t1 = t1.min(c);
    }
    if t0 > t1 || t0 <= 0.0 {
        return None;
    }
    let mut n = Vec3::zeros();
    n[axis] = sign;
    Some((t0, n))
}

fn box_surface_distance(p: &Vec3, b: &BoxPrim) -> f64 {
    let outside = Vec3::from_fn(|k, _| (b.min[k] - p[k]).max(p[k] - b.max[k]).max(0.0));
    if outside.norm() > 0.0 {
        return outside.norm();
    }
    (0..3).map(|k| (p[k] - b.min[k]).min(b.max[k] - p[k])).fold(f64::INFINITY, f64::min)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scene() -> SceneSpec {
        SceneSpec {
            extent: 1.0,
            checker_size: 0.1,
            ground_colors: [[0.2; 3], [0.8; 3]],
            boxes: vec![BoxPrim { min: Vec3::new(-0.1, -0.1, 0.0), max: Vec3::new(0.1, 0.1, 0.2), color: [1.0, 0.0, 0.0] }],
        }
    }

    #[test]
    fn ray_hits_box_top_before_ground() {
        let h = scene().intersect(&Vec3::new(0.0, 0.0, 1.0), &Vec3::new(0.0, 0.0, -1.0)).unwrap();
        assert_eq!(h.primitive, Some(0));
        assert!((h.t - 0.8).abs() < 1e-12);
        assert_eq!(h.normal, Vec3::z());
    }

    #[test]
    fn ray_hits_ground_outside_box() {
        let h = scene().intersect(&Vec3::new(0.5, 0.5, 1.0), &Vec3::new(0.0, 0.0, -2.0)).unwrap();
        assert_eq!(h.primitive, None);
        assert!((h.t - 0.5).abs() < 1e-12);
        assert!(scene().surface_distance(&h.point) < 1e-12);
    }

    #[test]
    fn ray_leaving_scene_misses() {
        assert!(scene().intersect(&Vec3::new(0.5, 0.5, 1.0), &Vec3::new(0.0, 0.0, 1.0)).is_none());
    }

    #[test]
    fn side_face_normal_faces_ray() {
        let h = scene().intersect(&Vec3::new(-1.0, 0.0, 0.1), &Vec3::new(1.0, 0.0, 0.0)).unwrap();
        assert_eq!(h.normal, Vec3::new(-1.0, 0.0, 0.0));
        assert!((h.point.x + 0.1).abs() < 1e-12);
    }

    #[test]
    fn validate_rejects_flat_box() {
        let mut s = scene();
        s.boxes[0].max.z = 0.0;
        assert!(s.validate().is_err());
    }
}
