use hand3r_core::geometry::{project_points, Vec2, Vec3};
use hand3r_core::handmodel::{forward_kinematics, HandMesh, NUM_TREE_JOINTS};
use hand3r_core::{BBox, CameraIntrinsics, HandParams, HandTemplate, Image, PointMap, RigidTransform};
use serde::{Deserialize, Serialize};

use crate::scene::SceneSpec;
use crate::Result;

/// Segmentation labels stored per pixel.
pub const SEG_BACKGROUND: u8 = 0;
pub const SEG_SCENE: u8 = 1;
/// Hand slot `i` is labelled `SEG_HAND0 + i`.
pub const SEG_HAND0: u8 = 2;

const NEAR: f64 = 1e-3;
const BACKGROUND: [f32; 3] = [0.62, 0.70, 0.82];
const PALM: [f32; 3] = [0.93, 0.74, 0.62];
const FINGERS: [[f32; 3]; 5] = [
    [0.95, 0.55, 0.45],
    [0.90, 0.80, 0.40],
    [0.55, 0.85, 0.55],
    [0.50, 0.65, 0.95],
    [0.85, 0.50, 0.85],
];

/// Ground truth of one hand in one frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HandAnnotation {
    /// World-frame parameters.
    pub params: HandParams,
    /// Projections of the 21 keypoints (may lie outside the image).
    pub keypoints: Vec<Vec2>,
    /// Tight box around the full (visible and hidden) projected hand.
    pub bbox: BBox,
    pub occlusion_ratio: f64,
    pub visible: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameRecord {
    pub image: Image,
    pub intrinsics: CameraIntrinsics,
    /// Camera-to-world pose.
    pub cam_pose: RigidTransform,
    /// Camera-frame z of visible scene surfaces; 0 where the pixel shows
    /// background or a hand.
    pub depth: Vec<f32>,
    /// Camera-frame pointmap back-projected from `depth`.
    pub gt_pointmap: PointMap,
    pub segmentation: Vec<u8>,
    pub hands: Vec<HandAnnotation>,
}

impl FrameRecord {
    pub fn res(&self) -> usize {
        self.image.width
    }
}

/// Coverage of one hand rendered alone on a canvas three image widths
/// wide, centred on the image.
struct HandCoverage {
    res: usize,
    depth: Vec<f64>,
    color: Vec<[f32; 3]>,
}

impl HandCoverage {
    fn side(&self) -> usize {
        3 * self.res
    }

    fn at_image(&self, col: usize, row: usize) -> (f64, [f32; 3]) {
        let i = (row + self.res) * self.side() + col + self.res;
        (self.depth[i], self.color[i])
    }

    fn covered_total(&self) -> usize {
        self.depth.iter().filter(|d| d.is_finite()).count()
    }
}

fn finger_of_vertex(template: &HandTemplate) -> Vec<Option<usize>> {
    template
        .skinning_weights
        .iter()
        .map(|w| {
            let j = (0..NUM_TREE_JOINTS).max_by(|a, b| w[*a].total_cmp(&w[*b])).unwrap();
            (j > 0).then(|| (j - 1) / 3)
        })
        .collect()
}

fn rasterize_hand(mesh_cam: &HandMesh, fingers: &[Option<usize>], k: &CameraIntrinsics, res: usize) -> HandCoverage {
    let side = 3 * res;
    let mut cov = HandCoverage { res, depth: vec![f64::INFINITY; side * side], color: vec![[0.0; 3]; side * side] };
    let off = res as f64;
    for f in &mesh_cam.faces {
        let p = f.map(|i| mesh_cam.vertices[i as usize]);
        if p.iter().any(|v| v.z < NEAR) {
            continue;
        }
        let uv = p.map(|v| Vec2::new(k.fx * v.x / v.z + k.cx, k.fy * v.y / v.z + k.cy));
        let area = edge(&uv[0], &uv[1], &uv[2]);
        if area.abs() < 1e-12 {
            continue;
        }
        let lo = uv.iter().fold(Vec2::repeat(f64::INFINITY), |a, b| a.inf(b));
        let hi = uv.iter().fold(Vec2::repeat(f64::NEG_INFINITY), |a, b| a.sup(b));
        let c0 = ((lo.x - 0.5).ceil() + off).max(0.0) as usize;
        let r0 = ((lo.y - 0.5).ceil() + off).max(0.0) as usize;
        let c1 = ((hi.x - 0.5).floor() + off).min(side as f64 - 1.0);
        let r1 = ((hi.y - 0.5).floor() + off).min(side as f64 - 1.0);
        if c1 < 0.0 || r1 < 0.0 {
            continue;
        }
        let normal = (p[1] - p[0]).cross(&(p[2] - p[0])).normalize();
        let view = ((p[0] + p[1] + p[2]) / 3.0).normalize();
        let shade = (0.5 + 0.5 * normal.dot(&view).abs()) as f32;
        let base = fingers[f[0] as usize].map_or(PALM, |k| FINGERS[k]);
        let color = base.map(|c| c * shade);
        for row in r0..=r1 as usize {
            for col in c0..=c1 as usize {
                let q = Vec2::new(col as f64 - off + 0.5, row as f64 - off + 0.5);
                let w = [edge(&uv[1], &uv[2], &q) / area, edge(&uv[2], &uv[0], &q) / area, edge(&uv[0], &uv[1], &q) / area];
                if w.iter().any(|x| *x < 0.0) {
                    continue;
                }
                let inv_z = w[0] / p[0].z + w[1] / p[1].z + w[2] / p[2].z;
                let z = 1.0 / inv_z;
                let i = row * side + col;
                if z < cov.depth[i] {
                    cov.depth[i] = z;
                    cov.color[i] = color;
                }
            }
        }
    }
    cov
}

fn edge(a: &Vec2, b: &Vec2, p: &Vec2) -> f64 {
    (b.x - a.x) * (p.y - a.y) - (b.y - a.y) * (p.x - a.x)
}

/// Quantizes a color channel to the 8-bit grid used on disk.
pub fn quantize(c: f32) -> f32 {
    (c.clamp(0.0, 1.0) * 255.0).round() as u8 as f32 / 255.0
}

/// Renders one frame: ray-cast scene, z-buffered hand meshes, depth and
/// pointmap of the visible scene, and per-hand annotations.
///
/// The occlusion ratio of a hand is `1 − visible / total`, where `total`
/// counts pixels covered by the hand rendered alone on the extended canvas
/// and `visible` counts those inside the image and nearer than the scene.
/// The other hand does not occlude.
pub fn rasterize_frame(
    scene: &SceneSpec,
    template: &HandTemplate,
    hands: &[HandParams],
    cam: &RigidTransform,
    k: &CameraIntrinsics,
    res: usize,
) -> Result<FrameRecord> {
    let world_to_cam = cam.inverse();
    let fingers = finger_of_vertex(template);
    let mut coverages = Vec::with_capacity(hands.len());
    let mut annotations = Vec::with_capacity(hands.len());
    for params in hands {
        let mesh = forward_kinematics(template, params)?.transformed(&world_to_cam);
        let keypoints = project_points(k, &mesh.joints)?;
        let outline = project_points(k, &mesh.vertices)?;
        let lo = outline.iter().chain(&keypoints).fold(Vec2::repeat(f64::INFINITY), |a, b| a.inf(b));
        let hi = outline.iter().chain(&keypoints).fold(Vec2::repeat(f64::NEG_INFINITY), |a, b| a.sup(b));
        coverages.push(rasterize_hand(&mesh, &fingers, k, res));
        annotations.push(HandAnnotation {
            params: params.clone(),
            keypoints,
            bbox: BBox::from_min_max(lo, hi),
            occlusion_ratio: 1.0,
            visible: false,
        });
    }

    let mut image = Image::zeros(res, res);
    let mut depth = vec![0.0f32; res * res];
    let mut segmentation = vec![SEG_BACKGROUND; res * res];
    let mut visible = vec![0usize; hands.len()];
    for row in 0..res {
        for col in 0..res {
            let dir_cam = Vec3::new((col as f64 + 0.5 - k.cx) / k.fx, (row as f64 + 0.5 - k.cy) / k.fy, 1.0);
            let hit = scene.intersect(&cam.translation, &(cam.rotation * dir_cam));
            let scene_z = hit.map_or(f64::INFINITY, |h| h.t);
            let mut best: Option<(usize, f64, [f32; 3])> = None;
            for (slot, cov) in coverages.iter().enumerate() {
                let (z, c) = cov.at_image(col, row);
                if z < scene_z {
                    visible[slot] += 1;
                }
                if z.is_finite() && best.map_or(true, |b| z < b.1) {
                    best = Some((slot, z, c));
                }
            }
            let i = row * res + col;
            let rgb = match (best, hit) {
                (Some((slot, z, c)), _) if z < scene_z => {
                    segmentation[i] = SEG_HAND0 + slot as u8;
                    c
                }
                (_, Some(h)) => {
                    segmentation[i] = SEG_SCENE;
                    depth[i] = h.t as f32;
                    SceneSpec::shade(&h)
                }
                _ => BACKGROUND,
            };
            image.set_pixel(col, row, rgb.map(quantize));
        }
    }

    for ((ann, cov), vis) in annotations.iter_mut().zip(&coverages).zip(&visible) {
        let total = cov.covered_total();
        ann.visible = *vis > 0;
        ann.occlusion_ratio = if total == 0 { 1.0 } else { 1.0 - *vis as f64 / total as f64 };
    }

    let gt_pointmap = PointMap::from_depth(k, &depth, res, res);
    Ok(FrameRecord { image, intrinsics: *k, cam_pose: cam.clone(), depth, gt_pointmap, segmentation, hands: annotations })
}
