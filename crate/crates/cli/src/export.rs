//! File formats of `reconstruct`.
//!
//! * PLY: ASCII 1.0, one `vertex` element with float `x y z` (meters,
//!   world frame) and uchar `red green blue`. Coordinates use six
//!   decimals.
//! * OBJ: one `v x y z` line per hand vertex (world frame, six decimals)
//!   then one `f a b c` line per face, 1-based.
//! * Trajectory CSV: header row, then one row per frame with the camera
//!   pose (`cam_x,cam_y,cam_z` position, `cam_rx,cam_ry,cam_rz` axis-angle
//!   rotation) and, per annotated hand `i`, the world root joint
//!   `hand{i}_x,hand{i}_y,hand{i}_z`, left empty where the hand was not
//!   predicted.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use hand3r_core::geometry::{matrix_to_axis_angle, Vec3};
use hand3r_core::RigidTransform;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ColoredPoint {
    pub position: Vec3,
    pub rgb: [u8; 3],
}

pub fn ply_string(points: &[ColoredPoint]) -> String {
    let mut s = String::with_capacity(64 + points.len() * 48);
    s.push_str("ply\nformat ascii 1.0\n");
    let _ = writeln!(s, "element vertex {}", points.len());
    s.push_str("property float x\nproperty float y\nproperty float z\n");
    s.push_str("property uchar red\nproperty uchar green\nproperty uchar blue\nend_header\n");
    for p in points {
        let v = p.position;
        let _ = writeln!(s, "{:.6} {:.6} {:.6} {} {} {}", v.x, v.y, v.z, p.rgb[0], p.rgb[1], p.rgb[2]);
    }
    s
}

pub fn obj_string(vertices: &[Vec3], faces: &[[u32; 3]]) -> String {
    let mut s = String::with_capacity(vertices.len() * 40 + faces.len() * 20);
    for v in vertices {
        let _ = writeln!(s, "v {:.6} {:.6} {:.6}", v.x, v.y, v.z);
    }
    for f in faces {
        let _ = writeln!(s, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1);
    }
    s
}

/// One trajectory row: camera-to-world pose and per-hand world roots.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRow {
    pub frame: usize,
    pub cam_pose: RigidTransform,
    pub hand_roots: Vec<Option<Vec3>>,
}

pub fn write_trajectory_csv(rows: &[TrajectoryRow], n_hands: usize, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    let mut header: Vec<String> = ["frame", "cam_x", "cam_y", "cam_z", "cam_rx", "cam_ry", "cam_rz"].map(String::from).to_vec();
    for i in 0..n_hands {
        header.extend(["x", "y", "z"].map(|c| format!("hand{i}_{c}")));
    }
    w.write_record(&header)?;
    let num = |v: f64| format!("{v:.9}");
    for r in rows {
        let t = r.cam_pose.translation;
        let aa = matrix_to_axis_angle(&r.cam_pose.rotation);
        let mut rec = vec![r.frame.to_string(), num(t.x), num(t.y), num(t.z), num(aa.x), num(aa.y), num(aa.z)];
        for i in 0..n_hands {
            match r.hand_roots.get(i).copied().flatten() {
                Some(p) => rec.extend([num(p.x), num(p.y), num(p.z)]),
                None => rec.extend([String::new(), String::new(), String::new()]),
            }
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}
