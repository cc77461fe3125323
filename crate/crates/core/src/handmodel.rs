//! Procedural MANO-compatible hand model.
//!
//! The template keeps the MANO interface: 16 tree joints (wrist plus three
//! per finger), 15 articulated joints, 10 shape coefficients and 21
//! keypoints. Keypoint order is the MANO joint order with the five
//! fingertips appended in the same finger order:
//!
//! | index | joint        | index | joint        |
//! |-------|--------------|-------|--------------|
//! | 0     | wrist        | 10–12 | ring 1–3     |
//! | 1–3   | index 1–3    | 13–15 | thumb 1–3    |
//! | 4–6   | middle 1–3   | 16–20 | tips: index, middle, pinky, ring, thumb |
//! | 7–9   | pinky 1–3    |       |              |
//!
//! The right-hand rest pose points the fingers along +x with the palm
//! facing −y and the thumb on the +z side. The left hand is the x-mirror.

use nalgebra::Matrix4;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::geometry::{axis_angle_to_matrix, matrix_to_axis_angle, Mat3, RigidTransform, Vec3};
use crate::{Error, Result};

pub const NUM_TREE_JOINTS: usize = 16;
pub const NUM_POSE_JOINTS: usize = 15;
pub const NUM_TIPS: usize = 5;
pub const NUM_KEYPOINTS: usize = NUM_TREE_JOINTS + NUM_TIPS;
pub const NUM_SHAPE: usize = 10;
pub const NUM_VERTICES: usize = 194;

pub const PARENTS: [Option<usize>; NUM_TREE_JOINTS] = [
    None,
    Some(0), Some(1), Some(2),
    Some(0), Some(4), Some(5),
    Some(0), Some(7), Some(8),
    Some(0), Some(10), Some(11),
    Some(0), Some(13), Some(14),
];

/// Tree joint each fingertip hangs from.
pub const TIP_PARENTS: [usize; NUM_TIPS] = [3, 6, 9, 12, 15];

/// First tree joint of each finger, in MANO finger order.
const FINGER_BASES: [usize; 5] = [1, 4, 7, 10, 13];

const RING_SEGMENTS: usize = 6;
const PALM_NX: usize = 5;
const PALM_NZ: usize = 6;
const WRIST_RING: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Handedness {
    Left,
    Right,
}

impl Handedness {
    pub fn other(self) -> Self {
        match self {
            Handedness::Left => Handedness::Right,
            Handedness::Right => Handedness::Left,
        }
    }
}

fn mirror(v: &Vec3) -> Vec3 {
    Vec3::new(-v.x, v.y, v.z)
}

/// Conjugation by `diag(-1, 1, 1)`.
pub fn mirror_rotation(r: &Mat3) -> Mat3 {
    let mut m = *r;
    m[(0, 1)] = -m[(0, 1)];
    m[(0, 2)] = -m[(0, 2)];
    m[(1, 0)] = -m[(1, 0)];
    m[(2, 0)] = -m[(2, 0)];
    m
}

fn mirror_axis_angle(v: &Vec3) -> Vec3 {
    Vec3::new(v.x, -v.y, -v.z)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HandTemplate {
    pub seed: u64,
    pub handedness: Handedness,
    /// Rest positions of the 16 tree joints (meters).
    pub rest_joints: Vec<Vec3>,
    /// Rest positions of the 5 fingertips (meters).
    pub tip_offsets: Vec<Vec3>,
    pub parent_index: Vec<Option<usize>>,
    pub template_vertices: Vec<Vec3>,
    pub faces: Vec<[u32; 3]>,
    /// One row of 16 nonnegative weights per vertex, each summing to one.
    pub skinning_weights: Vec<[f64; NUM_TREE_JOINTS]>,
    /// Per shape coefficient: offsets of the 21 keypoints (tree joints then tips).
    pub joint_shape_basis: Vec<Vec<Vec3>>,
    /// Per shape coefficient: offsets of every template vertex.
    pub vertex_shape_basis: Vec<Vec<Vec3>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HandParams {
    pub beta: [f64; NUM_SHAPE],
    /// Axis-angle rotation of tree joints 1..=15, relative to the parent.
    pub theta: [Vec3; NUM_POSE_JOINTS],
    /// Axis-angle rotation applied about the wrist.
    pub global_orient: Vec3,
    pub transl: Vec3,
    pub handedness: Handedness,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HandMesh {
    pub vertices: Vec<Vec3>,
    /// 16 tree joints followed by 5 tips.
    pub joints: Vec<Vec3>,
    pub faces: Vec<[u32; 3]>,
}

impl HandParams {
    pub fn zero(handedness: Handedness) -> Self {
        Self {
            beta: [0.0; NUM_SHAPE],
            theta: [Vec3::zeros(); NUM_POSE_JOINTS],
            global_orient: Vec3::zeros(),
            transl: Vec3::zeros(),
            handedness,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.beta.iter().all(|v| v.is_finite())
            && self.theta.iter().chain([&self.global_orient, &self.transl]).all(|v| v.iter().all(|x| x.is_finite()))
    }

    /// Parameters of the mirrored hand: left-hand FK of the result equals
    /// the x-negated FK of `self`.
    pub fn mirrored(&self) -> Self {
        Self {
            beta: self.beta,
            theta: self.theta.map(|t| mirror_axis_angle(&t)),
            global_orient: mirror_axis_angle(&self.global_orient),
            transl: mirror(&self.transl),
            handedness: self.handedness.other(),
        }
    }

    /// Re-expresses the hand after a rigid change of frame `t`, such that
    /// `FK(result) = t · FK(self)`.
    pub fn transformed(&self, template: &HandTemplate, t: &RigidTransform) -> Self {
        let wrist = shaped_wrist(template, self.handedness, &self.beta);
        let orient = t.rotation * axis_angle_to_matrix(&self.global_orient);
        let new_wrist = t.apply(&(wrist + self.transl));
        Self {
            global_orient: matrix_to_axis_angle(&orient),
            transl: new_wrist - wrist,
            ..self.clone()
        }
    }
}

/// Position of the shaped rest wrist for the given side.
pub fn shaped_wrist(template: &HandTemplate, handedness: Handedness, beta: &[f64; NUM_SHAPE]) -> Vec3 {
    let mut w = template.rest_joints[0];
    for (k, b) in beta.iter().enumerate() {
        w += template.joint_shape_basis[k][0] * *b;
    }
    if handedness != template.handedness {
        w = mirror(&w);
    }
    w
}

impl HandMesh {
    /// Copy with the wrist subtracted from every joint and vertex.
    pub fn root_relative(&self) -> HandMesh {
        let root = self.joints[0];
        HandMesh {
            vertices: self.vertices.iter().map(|v| v - root).collect(),
            joints: self.joints.iter().map(|j| j - root).collect(),
            faces: self.faces.clone(),
        }
    }

    pub fn transformed(&self, t: &RigidTransform) -> HandMesh {
        HandMesh { vertices: t.apply_all(&self.vertices), joints: t.apply_all(&self.joints), faces: self.faces.clone() }
    }
}

pub fn root_relative(mesh: &HandMesh) -> HandMesh {
    mesh.root_relative()
}

impl HandTemplate {
    /// Procedurally generated right-hand template; deterministic in `seed`.
    pub fn build(seed: u64) -> HandTemplate {
        build_template(seed)
    }

    /// The x-mirrored template of the other hand (faces re-wound).
    pub fn mirrored(&self) -> HandTemplate {
        let m = |vs: &Vec<Vec3>| vs.iter().map(mirror).collect::<Vec<_>>();
        HandTemplate {
            seed: self.seed,
            handedness: self.handedness.other(),
            rest_joints: m(&self.rest_joints),
            tip_offsets: m(&self.tip_offsets),
            parent_index: self.parent_index.clone(),
            template_vertices: m(&self.template_vertices),
            faces: self.faces.iter().map(|f| [f[0], f[2], f[1]]).collect(),
            skinning_weights: self.skinning_weights.clone(),
            joint_shape_basis: self.joint_shape_basis.iter().map(m).collect(),
            vertex_shape_basis: self.vertex_shape_basis.iter().map(m).collect(),
        }
    }

    /// Template for the requested side, mirroring if needed.
    pub fn for_side(&self, handedness: Handedness) -> std::borrow::Cow<'_, HandTemplate> {
        if handedness == self.handedness {
            std::borrow::Cow::Borrowed(self)
        } else {
            std::borrow::Cow::Owned(self.mirrored())
        }
    }

    /// Rest keypoints (tree joints then tips) after applying `beta`.
    pub fn shaped_keypoints(&self, beta: &[f64; NUM_SHAPE]) -> Vec<Vec3> {
        let mut out: Vec<Vec3> = self.rest_joints.iter().chain(&self.tip_offsets).copied().collect();
        for (k, b) in beta.iter().enumerate() {
            if *b != 0.0 {
                for (o, d) in out.iter_mut().zip(&self.joint_shape_basis[k]) {
                    *o += d * *b;
                }
            }
        }
        out
    }

    pub fn shaped_vertices(&self, beta: &[f64; NUM_SHAPE]) -> Vec<Vec3> {
        let mut out = self.template_vertices.clone();
        for (k, b) in beta.iter().enumerate() {
            if *b != 0.0 {
                for (o, d) in out.iter_mut().zip(&self.vertex_shape_basis[k]) {
                    *o += d * *b;
                }
            }
        }
        out
    }

    /// Rest bone lengths `|joint − parent|` for tree joints 1..16 and tips.
    pub fn rest_bone_lengths(&self, beta: &[f64; NUM_SHAPE]) -> Vec<f64> {
        let kp = self.shaped_keypoints(beta);
        bone_pairs().map(|(c, p)| (kp[c] - kp[p]).norm()).collect()
    }

    /// Checks the structural invariants; returns a description of the
    /// first violation.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidInput(m));
        if self.rest_joints.len() != NUM_TREE_JOINTS || self.tip_offsets.len() != NUM_TIPS {
            return bad("template joint counts".into());
        }
        if self.parent_index.len() != NUM_TREE_JOINTS || self.parent_index[0].is_some() {
            return bad("parent_index must have 16 entries with the wrist as root".into());
        }
        for (j, p) in self.parent_index.iter().enumerate().skip(1) {
            // parents precede children, which makes the tree acyclic
            match p {
                Some(p) if *p < j => {}
                _ => return bad(format!("joint {j} has invalid parent {p:?}")),
            }
        }
        if self.skinning_weights.len() != self.template_vertices.len() {
            return bad("one skinning row per vertex".into());
        }
        for (i, row) in self.skinning_weights.iter().enumerate() {
            let s: f64 = row.iter().sum();
            if row.iter().any(|w| *w < 0.0) || (s - 1.0).abs() > 1e-9 {
                return bad(format!("skinning row {i} sums to {s}"));
            }
        }
        if self.joint_shape_basis.len() != NUM_SHAPE || self.vertex_shape_basis.len() != NUM_SHAPE {
            return bad("shape basis must have 10 components".into());
        }
        let nv = self.template_vertices.len();
        for f in &self.faces {
            if f.iter().any(|i| *i as usize >= nv) {
                return bad("face index out of range".into());
            }
        }
        if self.rest_bone_lengths(&[0.0; NUM_SHAPE]).iter().any(|l| !(*l > 0.0)) {
            return bad("rest bone lengths must be positive".into());
        }
        Ok(())
    }

    /// Structured-text form: the serde JSON encoding of every field, with
    /// vectors as `[x, y, z]` arrays and faces as vertex-index triples.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("template serializes")
    }

    pub fn from_json(text: &str) -> Result<HandTemplate> {
        let t: HandTemplate = serde_json::from_str(text).map_err(|e| Error::InvalidInput(format!("template json: {e}")))?;
        t.validate()?;
        Ok(t)
    }
}

/// `(child, parent)` pairs over tree joints then tips, in keypoint indices.
pub fn bone_pairs() -> impl Iterator<Item = (usize, usize)> {
    (1..NUM_TREE_JOINTS)
        .map(|j| (j, PARENTS[j].unwrap()))
        .chain((0..NUM_TIPS).map(|k| (NUM_TREE_JOINTS + k, TIP_PARENTS[k])))
}

/// Forward kinematics and linear blend skinning from axis-angle parameters.
pub fn forward_kinematics(template: &HandTemplate, params: &HandParams) -> Result<HandMesh> {
    if !params.is_finite() {
        return Err(Error::InvalidInput("hand parameters must be finite".into()));
    }
    let orient = axis_angle_to_matrix(&params.global_orient);
    let rots: [Mat3; NUM_POSE_JOINTS] = params.theta.map(|t| axis_angle_to_matrix(&t));
    forward_kinematics_rotmats(template, params.handedness, &orient, &rots, &params.beta, &params.transl)
}

/// Forward kinematics from rotation matrices. `template` may be of either
/// side; a mismatch is resolved by mirroring, which is exact.
pub fn forward_kinematics_rotmats(
    template: &HandTemplate,
    handedness: Handedness,
    orient: &Mat3,
    rots: &[Mat3; NUM_POSE_JOINTS],
    beta: &[f64; NUM_SHAPE],
    transl: &Vec3,
) -> Result<HandMesh> {
    if !beta.iter().all(|b| b.is_finite()) || !transl.iter().all(|v| v.is_finite()) {
        return Err(Error::InvalidInput("hand parameters must be finite".into()));
    }
    if handedness != template.handedness {
        let m_orient = mirror_rotation(orient);
        let m_rots = rots.map(|r| mirror_rotation(&r));
        let mesh = fk_same_side(template, &m_orient, &m_rots, beta, &mirror(transl));
        return Ok(HandMesh {
            vertices: mesh.vertices.iter().map(mirror).collect(),
            joints: mesh.joints.iter().map(mirror).collect(),
            faces: mesh.faces.iter().map(|f| [f[0], f[2], f[1]]).collect(),
        });
    }
    Ok(fk_same_side(template, orient, rots, beta, transl))
}

fn fk_same_side(template: &HandTemplate, orient: &Mat3, rots: &[Mat3; NUM_POSE_JOINTS], beta: &[f64; NUM_SHAPE], transl: &Vec3) -> HandMesh {
    let shaped = template.shaped_keypoints(beta);
    let mut g = [Mat3::identity(); NUM_TREE_JOINTS];
    let mut joints = vec![Vec3::zeros(); NUM_KEYPOINTS];
    g[0] = *orient;
    joints[0] = shaped[0];
    for j in 1..NUM_TREE_JOINTS {
        let p = template.parent_index[j].expect("non-root joint has a parent");
        g[j] = g[p] * rots[j - 1];
        joints[j] = joints[p] + g[p] * (shaped[j] - shaped[p]);
    }
    for (k, &p) in TIP_PARENTS.iter().enumerate() {
        let t = NUM_TREE_JOINTS + k;
        joints[t] = joints[p] + g[p] * (shaped[t] - shaped[p]);
    }
    let verts = template.shaped_vertices(beta);
    let vertices = verts
        .iter()
        .zip(&template.skinning_weights)
        .map(|(v, w)| {
            let mut acc = Vec3::zeros();
            for j in 0..NUM_TREE_JOINTS {
                if w[j] != 0.0 {
                    acc += (g[j] * (v - shaped[j]) + joints[j]) * w[j];
                }
            }
            acc + transl
        })
        .collect();
    for j in joints.iter_mut() {
        *j += transl;
    }
    HandMesh { vertices, joints, faces: template.faces.clone() }
}

/// Joint chain of homogeneous transforms; used as an independent check of
/// [`forward_kinematics`] in tests.
pub fn joint_chain_homogeneous(template: &HandTemplate, params: &HandParams) -> Vec<Matrix4<f64>> {
    let tpl = template.for_side(params.handedness);
    let shaped = tpl.shaped_keypoints(&params.beta);
    let h = |r: &Mat3, t: &Vec3| {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(r);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(t);
        m
    };
    let mut out = vec![Matrix4::identity(); NUM_TREE_JOINTS];
    out[0] = h(&Mat3::identity(), &params.transl) * h(&axis_angle_to_matrix(&params.global_orient), &shaped[0]);
    for j in 1..NUM_TREE_JOINTS {
        let p = PARENTS[j].unwrap();
        out[j] = out[p] * h(&axis_angle_to_matrix(&params.theta[j - 1]), &(shaped[j] - shaped[p]));
    }
    out
}

// ---------------------------------------------------------------------------
// procedural template

struct FingerSpec {
    base: Vec3,
    dir: Vec3,
    droop: f64,
    lengths: [f64; 4],
    radii: [f64; 4],
}

fn finger_specs() -> [FingerSpec; 5] {
    let f = |base: [f64; 3], dir: [f64; 3], droop: f64, lengths: [f64; 4], radii: [f64; 4]| FingerSpec {
        base: Vec3::from(base),
        dir: Vec3::from(dir).normalize(),
        droop,
        lengths,
        radii,
    };
    // MANO finger order: index, middle, pinky, ring, thumb. Lengths are
    // base→joint2, joint2→joint3, joint3→tip; the first entry is unused
    // slack so all fingers share one layout.
    [
        f([0.088, 0.0, 0.024], [1.0, 0.0, 0.08], 0.05, [0.0, 0.040, 0.025, 0.021], [0.0095, 0.0088, 0.0080, 0.0072]),
        f([0.092, 0.0, 0.004], [1.0, 0.0, 0.0], 0.05, [0.0, 0.044, 0.029, 0.022], [0.0098, 0.0090, 0.0082, 0.0074]),
        f([0.078, 0.0, -0.031], [1.0, 0.0, -0.16], 0.05, [0.0, 0.032, 0.020, 0.019], [0.0085, 0.0078, 0.0070, 0.0064]),
        f([0.087, 0.0, -0.014], [1.0, 0.0, -0.08], 0.05, [0.0, 0.041, 0.027, 0.021], [0.0092, 0.0086, 0.0078, 0.0070]),
        f([0.025, -0.008, 0.020], [0.7, -0.2, 0.7], 0.08, [0.0, 0.036, 0.032, 0.026], [0.0120, 0.0105, 0.0092, 0.0080]),
    ]
}

fn perpendicular_basis(dir: &Vec3) -> (Vec3, Vec3) {
    let helper = if dir.y.abs() < 0.9 { Vec3::y() } else { Vec3::x() };
    let u = dir.cross(&helper).normalize();
    let v = u.cross(dir).normalize();
    (u, v)
}

fn smoothstep(x: f64) -> f64 {
    let t = x.clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

/// Procedural right-hand template; see the module docs for conventions.
pub fn build_template(seed: u64) -> HandTemplate {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rest_joints = vec![Vec3::zeros(); NUM_TREE_JOINTS];
    let mut tips = vec![Vec3::zeros(); NUM_TIPS];
    // chain points (joint1, joint2, joint3, tip) per finger
    let mut chains: Vec<[Vec3; 4]> = Vec::with_capacity(5);
    let specs = finger_specs();

    for (f, spec) in specs.iter().enumerate() {
        let jitter = Vec3::new(rng.gen_range(-1.5e-3..1.5e-3), rng.gen_range(-1.0e-3..1.0e-3), rng.gen_range(-1.5e-3..1.5e-3));
        let mut pts = [spec.base + jitter; 4];
        let mut dir = spec.dir;
        for s in 1..4 {
            let len = spec.lengths[s] * (1.0 + rng.gen_range(-0.04..0.04));
            // each segment bends slightly towards the palm
            dir = (dir - Vec3::y() * spec.droop).normalize();
            pts[s] = pts[s - 1] + dir * len;
        }
        let b = FINGER_BASES[f];
        rest_joints[b] = pts[0];
        rest_joints[b + 1] = pts[1];
        rest_joints[b + 2] = pts[2];
        tips[f] = pts[3];
        chains.push(pts);
    }

    let mut vertices: Vec<Vec3> = Vec::with_capacity(NUM_VERTICES);
    let mut weights: Vec<[f64; NUM_TREE_JOINTS]> = Vec::with_capacity(NUM_VERTICES);
    let mut faces: Vec<[u32; 3]> = Vec::new();

    // finger tubes: four rings of RING_SEGMENTS vertices plus a tip cap
    for (f, (spec, pts)) in specs.iter().zip(&chains).enumerate() {
        let b = FINGER_BASES[f];
        let start = vertices.len() as u32;
        for (ring, p) in pts.iter().enumerate() {
            let dir = if ring < 3 { (pts[ring + 1] - pts[ring]).normalize() } else { (pts[3] - pts[2]).normalize() };
            let (u, v) = perpendicular_basis(&dir);
            let mut w = [0.0; NUM_TREE_JOINTS];
            match ring {
                0 => {
                    w[0] = 0.5;
                    w[b] = 0.5;
                }
                1 => {
                    w[b] = 0.5;
                    w[b + 1] = 0.5;
                }
                2 => {
                    w[b + 1] = 0.5;
                    w[b + 2] = 0.5;
                }
                _ => w[b + 2] = 1.0,
            }
            for s in 0..RING_SEGMENTS {
                let a = s as f64 * std::f64::consts::TAU / RING_SEGMENTS as f64;
                vertices.push(p + (u * a.cos() + v * a.sin()) * spec.radii[ring]);
                weights.push(w);
            }
        }
        let tip_dir = (pts[3] - pts[2]).normalize();
        vertices.push(pts[3] + tip_dir * spec.radii[3] * 0.9);
        let mut w = [0.0; NUM_TREE_JOINTS];
        w[b + 2] = 1.0;
        weights.push(w);

        let n = RING_SEGMENTS as u32;
        for ring in 0..3u32 {
            for s in 0..n {
                let a = start + ring * n + s;
                let b2 = start + ring * n + (s + 1) % n;
                let c = a + n;
                let d = b2 + n;
                faces.push([a, b2, d]);
                faces.push([a, d, c]);
            }
        }
        let cap = start + 4 * n;
        for s in 0..n {
            faces.push([start + 3 * n + s, start + 3 * n + (s + 1) % n, cap]);
        }
    }

    // palm slab: top (back of hand) and bottom (palm) grids
    let palm_start = vertices.len() as u32;
    let knuckle_z: Vec<(usize, f64)> = [0usize, 1, 2, 3].iter().map(|&f| (FINGER_BASES[f], rest_joints[FINGER_BASES[f]].z)).collect();
    for &y in &[0.012, -0.012] {
        for ix in 0..PALM_NX {
            for iz in 0..PALM_NZ {
                let x = 0.085 * ix as f64 / (PALM_NX - 1) as f64;
                let z = -0.035 + 0.067 * iz as f64 / (PALM_NZ - 1) as f64;
                vertices.push(Vec3::new(x, y, z));
                let mut w = [0.0; NUM_TREE_JOINTS];
                let t = smoothstep((x - 0.045) / 0.04);
                let nearest = knuckle_z.iter().min_by(|a, b| (a.1 - z).abs().total_cmp(&(b.1 - z).abs())).unwrap().0;
                w[0] = 1.0 - t;
                w[nearest] += t * 0.6;
                w[0] += t * 0.4;
                if z > 0.015 && x < 0.06 {
                    let s = 0.3 * smoothstep((z - 0.015) / 0.017);
                    w[0] -= s * w[0];
                    w[13] += s;
                }
                weights.push(w);
            }
        }
    }
    let idx = |layer: u32, ix: usize, iz: usize| palm_start + layer * (PALM_NX * PALM_NZ) as u32 + (ix * PALM_NZ + iz) as u32;
    for layer in 0..2u32 {
        for ix in 0..PALM_NX - 1 {
            for iz in 0..PALM_NZ - 1 {
                let (a, b2, c, d) = (idx(layer, ix, iz), idx(layer, ix + 1, iz), idx(layer, ix, iz + 1), idx(layer, ix + 1, iz + 1));
                if layer == 0 {
                    faces.push([a, c, b2]);
                    faces.push([b2, c, d]);
                } else {
                    faces.push([a, b2, c]);
                    faces.push([b2, d, c]);
                }
            }
        }
    }
    // side walls along the grid boundary loop
    let mut boundary: Vec<(usize, usize)> = Vec::new();
    boundary.extend((0..PALM_NX).map(|ix| (ix, 0)));
    boundary.extend((1..PALM_NZ).map(|iz| (PALM_NX - 1, iz)));
    boundary.extend((0..PALM_NX - 1).rev().map(|ix| (ix, PALM_NZ - 1)));
    boundary.extend((1..PALM_NZ - 1).rev().map(|iz| (0, iz)));
    for i in 0..boundary.len() {
        let (p, q) = (boundary[i], boundary[(i + 1) % boundary.len()]);
        let (a, b2) = (idx(0, p.0, p.1), idx(0, q.0, q.1));
        let (c, d) = (idx(1, p.0, p.1), idx(1, q.0, q.1));
        faces.push([a, b2, d]);
        faces.push([a, d, c]);
    }

    // wrist disc
    let wrist_start = vertices.len() as u32;
    let mut w_root = [0.0; NUM_TREE_JOINTS];
    w_root[0] = 1.0;
    for s in 0..WRIST_RING {
        let a = s as f64 * std::f64::consts::TAU / WRIST_RING as f64;
        vertices.push(Vec3::new(-0.01, 0.012 * a.sin(), 0.022 * a.cos()));
        weights.push(w_root);
    }
    vertices.push(Vec3::new(-0.012, 0.0, 0.0));
    weights.push(w_root);
    for s in 0..WRIST_RING as u32 {
        faces.push([wrist_start + s, wrist_start + (s + 1) % WRIST_RING as u32, wrist_start + WRIST_RING as u32]);
    }
    debug_assert_eq!(vertices.len(), NUM_VERTICES);

    // jitter existing weights, then normalise rows
    for w in weights.iter_mut() {
        for x in w.iter_mut() {
            if *x > 0.0 {
                *x *= 1.0 + rng.gen_range(0.0..0.05);
            }
        }
        let s: f64 = w.iter().sum();
        for x in w.iter_mut() {
            *x /= s;
        }
    }

    // shape basis: smooth linear deformation fields about the wrist
    let mut fields: Vec<Mat3> = vec![
        Mat3::identity() * 0.06,
        Mat3::from_diagonal(&Vec3::new(0.05, 0.0, 0.0)),
        Mat3::from_diagonal(&Vec3::new(0.0, 0.0, 0.05)),
        Mat3::from_diagonal(&Vec3::new(0.0, 0.04, 0.0)),
    ];
    while fields.len() < NUM_SHAPE {
        let mut a = Mat3::from_fn(|_, _| rng.gen_range(-0.015..0.015));
        a = (a + a.transpose()) * 0.5;
        fields.push(a);
    }
    let wrist = rest_joints[0];
    let keypoints: Vec<Vec3> = rest_joints.iter().chain(&tips).copied().collect();
    let joint_shape_basis = fields.iter().map(|a| keypoints.iter().map(|p| a * (p - wrist)).collect()).collect();
    let vertex_shape_basis = fields.iter().map(|a| vertices.iter().map(|p| a * (p - wrist)).collect()).collect();

    HandTemplate {
        seed,
        handedness: Handedness::Right,
        rest_joints,
        tip_offsets: tips,
        parent_index: PARENTS.to_vec(),
        template_vertices: vertices,
        faces,
        skinning_weights: weights,
        joint_shape_basis,
        vertex_shape_basis,
    }
}
