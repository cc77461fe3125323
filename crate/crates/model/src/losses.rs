//! Training objectives. Every reduction over joints, vertices and pixels
//! is a mean; per-hand terms are averaged over the prompted hands.
//!
//! Each loss exists twice: as graph operations for training and as a
//! plain `f64` evaluation on decoded predictions. Tests check that both
//! agree.

use hand3r_core::geometry::{project_point, rotation_angle, Mat3, Vec2, Vec3};
use hand3r_core::handmodel::{forward_kinematics, root_relative};
use hand3r_core::{HandParams, HandTemplate, Handedness, RigidTransform};
use hand3r_synth::FrameRecord;
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Tensor, Unary, Var};
use crate::network::{FrameInput, FrameNodes, FramePrediction, Hand3R, HandNodes};
use crate::{Error, Result};

/// Confidence regularization weight of the pointmap term.
pub const CONF_ALPHA: f64 = 0.01;
/// Depth floor used when projecting predicted joints.
pub const PROJ_MIN_Z: f64 = 1e-3;

/// Per-term weights; the defaults are all one except `gamma = 0.1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub lambda_joint: f64,
    pub lambda_vert: f64,
    pub lambda_trans: f64,
    pub lambda_abs: f64,
    pub lambda_2d: f64,
    pub gamma: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { lambda_joint: 1.0, lambda_vert: 1.0, lambda_trans: 1.0, lambda_abs: 1.0, lambda_2d: 1.0, gamma: 0.1 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [
            ("lambda_joint", self.lambda_joint),
            ("lambda_vert", self.lambda_vert),
            ("lambda_trans", self.lambda_trans),
            ("lambda_abs", self.lambda_abs),
            ("lambda_2d", self.lambda_2d),
            ("gamma", self.gamma),
        ];
        match all.iter().find(|(_, v)| !(*v >= 0.0 && v.is_finite())) {
            Some((name, v)) => Err(Error::Config(format!("{name} must be a finite value >= 0, got {v}"))),
            None => Ok(()),
        }
    }
}

/// Scalar loss terms. Terms a stage does not use stay zero.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub joint: f64,
    pub vert: f64,
    pub trans: f64,
    pub abs: f64,
    pub l2d: f64,
    pub pts: f64,
    pub cam: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub const TERMS: [&'static str; 8] = ["joint", "vert", "trans", "abs", "l2d", "pts", "cam", "total"];

    pub fn values(&self) -> [f64; 8] {
        [self.joint, self.vert, self.trans, self.abs, self.l2d, self.pts, self.cam, self.total]
    }

    pub fn weighted_total(&self, w: &LossWeights) -> f64 {
        w.lambda_joint * self.joint
            + w.lambda_vert * self.vert
            + w.lambda_trans * self.trans
            + w.lambda_abs * self.abs
            + w.lambda_2d * self.l2d
            + w.gamma * (self.pts + self.cam)
    }

    /// Name of the first non-finite term.
    pub fn non_finite_term(&self) -> Option<&'static str> {
        Self::TERMS.iter().zip(self.values()).find(|(_, v)| !v.is_finite()).map(|(n, _)| *n)
    }

    pub fn add_scaled(&mut self, other: &LossBreakdown, k: f64) {
        self.joint += k * other.joint;
        self.vert += k * other.vert;
        self.trans += k * other.trans;
        self.abs += k * other.abs;
        self.l2d += k * other.l2d;
        self.pts += k * other.pts;
        self.cam += k * other.cam;
        self.total += k * other.total;
    }
}

fn rows(pts: &[Vec3]) -> Tensor {
    Array2::from_shape_fn((pts.len(), 3), |(i, k)| pts[i][k])
}

fn mirror_x(p: &Vec3) -> Vec3 {
    Vec3::new(-p.x, p.y, p.z)
}

fn mean_sq(a: &[Vec3], b: &[Vec3]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).norm_squared()).sum::<f64>() / a.len() as f64
}

// ---- targets ----

/// Ground truth of one prompted hand, camera frame.
#[derive(Debug, Clone)]
pub struct HandTarget {
    pub handedness: Handedness,
    /// Root-relative joints, mirrored into the right-hand frame for left hands.
    pub rel_joints: Tensor,
    pub rel_vertices: Tensor,
    pub params_cam: HandParams,
    pub joints_cam: Tensor,
    /// `21×2` pixel keypoints.
    pub keypoints: Tensor,
}

impl HandTarget {
    pub fn new(template: &HandTemplate, params_cam: &HandParams, keypoints: &[Vec2]) -> Result<Self> {
        let mesh = forward_kinematics(template, params_cam)?;
        let rel = root_relative(&mesh);
        let fix = |p: &Vec3| if params_cam.handedness == Handedness::Left { mirror_x(p) } else { *p };
        let rj: Vec<Vec3> = rel.joints.iter().map(fix).collect();
        let rv: Vec<Vec3> = rel.vertices.iter().map(fix).collect();
        Ok(Self {
            handedness: params_cam.handedness,
            rel_joints: rows(&rj),
            rel_vertices: rows(&rv),
            params_cam: params_cam.clone(),
            joints_cam: rows(&mesh.joints),
            keypoints: Array2::from_shape_fn((keypoints.len(), 2), |(i, k)| keypoints[i][k]),
        })
    }
}

/// Pointmap and relative camera pose ground truth of one frame.
#[derive(Debug, Clone)]
pub struct SceneTarget {
    /// `N×3`, token-major.
    pub points: Tensor,
    /// `N×1` validity.
    pub mask: Tensor,
    pub n_valid: usize,
    /// Row-major `1×9` rotation of the camera pose relative to the reference.
    pub cam_rot: Tensor,
    pub cam_t: Tensor,
}

#[derive(Debug, Clone)]
pub struct FrameTarget {
    /// Aligned with the model's [`FrameInput::hands`].
    pub hands: Vec<HandTarget>,
    pub scene: SceneTarget,
}

/// Indices of the annotated hands that [`FrameInput::from_record`] prompts.
pub fn prompted_annotations(rec: &FrameRecord) -> Vec<usize> {
    let res = rec.res();
    (0..rec.hands.len()).filter(|&i| rec.hands[i].bbox.intersects_image(res, res)).collect()
}

/// Camera pose of `rec` relative to `reference` (both camera-to-world).
pub fn relative_pose(reference: &RigidTransform, rec: &FrameRecord) -> RigidTransform {
    reference.inverse().compose(&rec.cam_pose)
}

impl FrameTarget {
    pub fn new(model: &Hand3R, rec: &FrameRecord, reference: &RigidTransform) -> Result<Self> {
        let world_to_cam = rec.cam_pose.inverse();
        let mut hands = Vec::new();
        for i in prompted_annotations(rec) {
            let ann = &rec.hands[i];
            let cam = ann.params.transformed(&model.template, &world_to_cam);
            hands.push(HandTarget::new(&model.template, &cam, &ann.keypoints)?);
        }
        let order = model.token_major_pixels();
        let pm = &rec.gt_pointmap;
        if pm.points.len() != model.config.image_res * model.config.image_res {
            return Err(Error::InvalidInput(format!("gt_pointmap has {} pixels", pm.points.len())));
        }
        let points = Array2::from_shape_fn((order.len(), 3), |(i, k)| pm.points[order[i]][k]);
        let mask = Array2::from_shape_fn((order.len(), 1), |(i, _)| if pm.valid[order[i]] { 1.0 } else { 0.0 });
        let rel = relative_pose(reference, rec);
        Ok(Self {
            hands,
            scene: SceneTarget {
                points,
                mask,
                n_valid: pm.valid_count(),
                cam_rot: Array2::from_shape_fn((1, 9), |(_, k)| rel.rotation[(k / 3, k % 3)]),
                cam_t: Array2::from_shape_fn((1, 3), |(_, k)| rel.translation[k]),
            },
        })
    }
}

// ---- graph losses ----

fn mean_row_sq(g: &mut Graph, a: Var, b: Var) -> Var {
    let d = g.sub(a, b);
    let sq = g.square(d);
    let s = g.sum(sq);
    let n = g.shape(a).0 as f64;
    g.scale(s, 1.0 / n)
}

/// Stage-1 `(joint, vertex)` terms of one hand.
pub fn stage1_graph(g: &mut Graph, model: &Hand3R, rots: Var, beta: Var, target: &HandTarget) -> (Var, Var) {
    let mesh = model.diff_hand().forward(g, rots, beta, true);
    let n_j = g.shape(mesh.joints).0;
    let n_v = g.shape(mesh.vertices).0;
    let root_j = g.gather_rows(mesh.joints, &vec![0; n_j]);
    let root_v = g.gather_rows(mesh.joints, &vec![0; n_v]);
    let rj = g.sub(mesh.joints, root_j);
    let rv = g.sub(mesh.vertices, root_v);
    let tj = g.constant(target.rel_joints.clone());
    let tv = g.constant(target.rel_vertices.clone());
    (mean_row_sq(g, rj, tj), mean_row_sq(g, rv, tv))
}

/// Camera-frame joints of a hand node (`21×3`).
pub fn absolute_joints(g: &mut Graph, model: &Hand3R, hand: &HandNodes) -> Var {
    let mesh = model.diff_hand().forward(g, hand.rots, hand.beta, false);
    let j = match hand.handedness {
        Handedness::Right => mesh.joints,
        Handedness::Left => {
            let m = g.constant(Array2::from_shape_vec((1, 3), vec![-1.0, 1.0, 1.0]).expect("row"));
            g.mul(mesh.joints, m)
        }
    };
    g.add(j, hand.transl)
}

/// Stage-2 `(trans, abs, 2d)` terms of one hand.
pub fn hand_stage2_graph(
    g: &mut Graph,
    model: &Hand3R,
    hand: &HandNodes,
    target: &HandTarget,
    frame: &FrameInput,
) -> (Var, Var, Var) {
    let t_gt = g.constant(Array2::from_shape_fn((1, 3), |(_, k)| target.params_cam.transl[k]));
    let dt = g.sub(hand.transl, t_gt);
    let dt = g.square(dt);
    let trans = g.sum(dt);

    let joints = absolute_joints(g, model, hand);
    let j_gt = g.constant(target.joints_cam.clone());
    let abs = mean_row_sq(g, joints, j_gt);

    let k = &frame.intrinsics;
    let x = g.slice_cols(joints, 0, 1);
    let y = g.slice_cols(joints, 1, 2);
    let z = g.slice_cols(joints, 2, 3);
    let z = g.unary(z, Unary::ClampMin(PROJ_MIN_Z));
    let u = g.div(x, z);
    let u = g.scale(u, k.fx);
    let u = g.offset(u, k.cx);
    let v = g.div(y, z);
    let v = g.scale(v, k.fy);
    let v = g.offset(v, k.cy);
    let uv = g.concat_cols(&[u, v]);
    let kp = g.constant(target.keypoints.clone());
    let px = mean_row_sq(g, uv, kp);
    let diag2 = 2.0 * (frame.image.width as f64).powi(2);
    let l2d = g.scale(px, 1.0 / diag2);
    (trans, abs, l2d)
}

/// `(pts, cam)` terms of one frame.
pub fn scene_graph(g: &mut Graph, nodes: &FrameNodes, target: &SceneTarget) -> (Var, Var) {
    let pts = if target.n_valid == 0 {
        g.constant(Array2::zeros((1, 1)))
    } else {
        let gt = g.constant(target.points.clone());
        let d = g.sub(nodes.points, gt);
        let d = g.square(d);
        let e = g.sum_rows(d);
        let ce = g.mul(nodes.conf, e);
        let logc = g.log(nodes.conf);
        let reg = g.sub(nodes.conf, logc);
        let reg = g.offset(reg, -1.0);
        let reg = g.scale(reg, CONF_ALPHA);
        let per = g.add(ce, reg);
        let mask = g.constant(target.mask.clone());
        let per = g.mul(per, mask);
        let s = g.sum(per);
        g.scale(s, 1.0 / target.n_valid as f64)
    };
    let r_gt = g.constant(target.cam_rot.clone());
    let prod = g.mul(nodes.cam_rot, r_gt);
    let tr = g.sum(prod);
    let cos = g.offset(tr, -1.0);
    let cos = g.scale(cos, 0.5);
    let ang = g.unary(cos, Unary::AcosSq);
    let t_gt = g.constant(target.cam_t.clone());
    let dt = g.sub(nodes.cam_t, t_gt);
    let dt = g.square(dt);
    let dt = g.sum(dt);
    let cam = g.add(ang, dt);
    (pts, cam)
}

/// Graph total and breakdown of one stage-2 frame.
pub fn stage2_frame_graph(
    g: &mut Graph,
    model: &Hand3R,
    nodes: &FrameNodes,
    target: &FrameTarget,
    frame: &FrameInput,
    w: &LossWeights,
) -> (Var, LossBreakdown) {
    let mut parts = LossBreakdown::default();
    let mut hand_total: Option<Var> = None;
    let n = nodes.hands.len().max(1) as f64;
    for h in &nodes.hands {
        let (trans, abs, l2d) = hand_stage2_graph(g, model, h, &target.hands[h.query], frame);
        parts.trans += g.scalar(trans) / n;
        parts.abs += g.scalar(abs) / n;
        parts.l2d += g.scalar(l2d) / n;
        let a = g.scale(trans, w.lambda_trans / n);
        let b = g.scale(abs, w.lambda_abs / n);
        let c = g.scale(l2d, w.lambda_2d / n);
        let s = g.add(a, b);
        let s = g.add(s, c);
        hand_total = Some(match hand_total {
            Some(t) => g.add(t, s),
            None => s,
        });
    }
    let (pts, cam) = scene_graph(g, nodes, &target.scene);
    parts.pts = g.scalar(pts);
    parts.cam = g.scalar(cam);
    let sc = g.add(pts, cam);
    let sc = g.scale(sc, w.gamma);
    let total = match hand_total {
        Some(t) => g.add(t, sc),
        None => sc,
    };
    parts.total = g.scalar(total);
    (total, parts)
}

// ---- value losses ----

/// Stage-1 loss between decoded parameters.
pub fn loss_stage1(template: &HandTemplate, pred: &HandParams, gt: &HandParams, w: &LossWeights) -> Result<LossBreakdown> {
    if pred.handedness != gt.handedness {
        return Err(Error::InvalidInput(format!("handedness mismatch: {:?} vs {:?}", pred.handedness, gt.handedness)));
    }
    let p = root_relative(&forward_kinematics(template, pred)?);
    let t = root_relative(&forward_kinematics(template, gt)?);
    let joint = mean_sq(&p.joints, &t.joints);
    let vert = mean_sq(&p.vertices, &t.vertices);
    let mut b = LossBreakdown { joint, vert, ..Default::default() };
    b.total = b.weighted_total(w);
    Ok(b)
}

fn pointmap_term(pred: &FramePrediction, rec: &FrameRecord) -> Result<f64> {
    let pm = &rec.gt_pointmap;
    if pred.scene.pointmap.points.len() != pm.points.len() || pred.scene.confidence.len() != pm.points.len() {
        return Err(Error::InvalidInput("gt_pointmap size differs from the prediction".into()));
    }
    let n = pm.valid_count();
    if n == 0 {
        return Ok(0.0);
    }
    let mut s = 0.0;
    for i in 0..pm.points.len() {
        if pm.valid[i] {
            let c = pred.scene.confidence[i];
            let e = (pred.scene.pointmap.points[i] - pm.points[i]).norm_squared();
            s += c * e + CONF_ALPHA * (c - c.ln() - 1.0);
        }
    }
    Ok(s / n as f64)
}

fn camera_term(pose: &RigidTransform, gt: &RigidTransform) -> f64 {
    let r: Mat3 = gt.rotation.transpose() * pose.rotation;
    rotation_angle(&r).powi(2) + (pose.translation - gt.translation).norm_squared()
}

/// Stage-2 loss of a decoded frame prediction. Hands are matched to the
/// annotations through [`prompted_annotations`]; the camera pose is
/// compared relative to `reference`.
pub fn loss_stage2(
    template: &HandTemplate,
    pred: &FramePrediction,
    rec: &FrameRecord,
    reference: &RigidTransform,
    w: &LossWeights,
) -> Result<LossBreakdown> {
    let prompted = prompted_annotations(rec);
    let world_to_cam = rec.cam_pose.inverse();
    let k = &rec.intrinsics;
    let diag2 = 2.0 * (rec.res() as f64).powi(2);
    let mut b = LossBreakdown::default();
    let n = pred.hands.len().max(1) as f64;
    for h in &pred.hands {
        let ann = prompted
            .get(h.query)
            .map(|&i| &rec.hands[i])
            .ok_or_else(|| Error::InvalidInput(format!("hands[{}] missing from ground truth", h.query)))?;
        let gt = ann.params.transformed(template, &world_to_cam);
        let gt_joints = forward_kinematics(template, &gt)?.joints;
        b.trans += (h.params.transl - gt.transl).norm_squared() / n;
        b.abs += mean_sq(&h.mesh_cam.joints, &gt_joints) / n;
        let px: f64 = h
            .mesh_cam
            .joints
            .iter()
            .zip(&ann.keypoints)
            .map(|(j, kp)| {
                let jz = Vec3::new(j.x, j.y, j.z.max(PROJ_MIN_Z));
                (project_point(k, &jz) - kp).norm_squared()
            })
            .sum::<f64>()
            / ann.keypoints.len() as f64;
        b.l2d += px / diag2 / n;
    }
    b.pts = pointmap_term(pred, rec)?;
    b.cam = camera_term(&pred.scene.cam_pose, &relative_pose(reference, rec));
    b.total = b.weighted_total(w);
    Ok(b)
}

/// Held-out pointmap term of a prediction, used by the forgetting guard.
pub fn pointmap_loss(pred: &FramePrediction, rec: &FrameRecord) -> Result<f64> {
    pointmap_term(pred, rec)
}
