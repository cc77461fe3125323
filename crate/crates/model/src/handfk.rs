//! Forward kinematics and skinning as graph operations, for losses that
//! differentiate through the hand model. Always evaluates the right-hand
//! template; left hands are handled by mirroring outside.

use hand3r_core::handmodel::{NUM_KEYPOINTS, NUM_SHAPE, NUM_TREE_JOINTS, NUM_VERTICES};
use hand3r_core::HandTemplate;
use ndarray::Array2;

use crate::autodiff::{Graph, Tensor, Var};

/// Rows `[a1 | a2]` of 6D rotations to row-major `n×9` rotation matrices
/// whose columns are the Gram-Schmidt frame of `a1, a2`.
pub fn rot6d_rows(g: &mut Graph, x: Var) -> Var {
    let a1 = g.slice_cols(x, 0, 3);
    let a2 = g.slice_cols(x, 3, 6);
    let b1 = normalize_rows(g, a1);
    let d = g.mul(b1, a2);
    let d = g.sum_rows(d);
    let proj = g.mul(b1, d);
    let u2 = g.sub(a2, proj);
    let b2 = normalize_rows(g, u2);
    let c1: Vec<Var> = (0..3).map(|k| g.slice_cols(b1, k, k + 1)).collect();
    let c2: Vec<Var> = (0..3).map(|k| g.slice_cols(b2, k, k + 1)).collect();
    let mut c3 = Vec::with_capacity(3);
    for (i, j) in [(1, 2), (2, 0), (0, 1)] {
        let p = g.mul(c1[i], c2[j]);
        let q = g.mul(c1[j], c2[i]);
        c3.push(g.sub(p, q));
    }
    g.concat_cols(&[c1[0], c2[0], c3[0], c1[1], c2[1], c3[1], c1[2], c2[2], c3[2]])
}

fn normalize_rows(g: &mut Graph, a: Var) -> Var {
    let sq = g.square(a);
    let n = g.sum_rows(sq);
    let n = g.sqrt(n);
    g.div(a, n)
}

/// Constants of the right-hand template laid out for graph evaluation.
#[derive(Debug, Clone)]
pub struct DiffHand {
    keypoints: Tensor,
    keypoint_basis: Tensor,
    vertices: Tensor,
    vertex_basis: Tensor,
    weights: Tensor,
}

/// Tree levels in MANO finger order; level 0 is the wrist.
const LEVELS: [[usize; 5]; 3] = [[1, 4, 7, 10, 13], [2, 5, 8, 11, 14], [3, 6, 9, 12, 15]];
const TIPS: [usize; 5] = [16, 17, 18, 19, 20];

pub struct DiffMesh {
    /// `21×3`, wrist first.
    pub joints: Var,
    /// `V×3`.
    pub vertices: Var,
}

impl DiffHand {
    pub fn new(template: &HandTemplate) -> Self {
        let t = template.for_side(hand3r_core::Handedness::Right);
        let rows = |pts: &[hand3r_core::geometry::Vec3]| Array2::from_shape_fn((pts.len(), 3), |(i, k)| pts[i][k]);
        let kp: Vec<_> = t.rest_joints.iter().chain(&t.tip_offsets).copied().collect();
        let flat = |basis: &[Vec<hand3r_core::geometry::Vec3>]| {
            Array2::from_shape_fn((NUM_SHAPE, basis[0].len() * 3), |(k, i)| basis[k][i / 3][i % 3])
        };
        Self {
            keypoints: rows(&kp),
            keypoint_basis: flat(&t.joint_shape_basis),
            vertices: rows(&t.template_vertices),
            vertex_basis: flat(&t.vertex_shape_basis),
            weights: Array2::from_shape_fn((NUM_VERTICES, NUM_TREE_JOINTS), |(v, j)| t.skinning_weights[v][j]),
        }
    }

    /// Shaped keypoints `21×3` for `beta` (`1×10`).
    pub fn shaped_keypoints(&self, g: &mut Graph, beta: Var) -> Var {
        let base = g.constant(self.keypoints.clone());
        let basis = g.constant(self.keypoint_basis.clone());
        let off = g.matmul(beta, basis);
        let off = g.reshape(off, (NUM_KEYPOINTS, 3));
        g.add(base, off)
    }

    /// Posed mesh without translation. `rots` is `16×9` (row 0 the global
    /// orientation, rows 1.. the articulated joints), `beta` is `1×10`.
    pub fn forward(&self, g: &mut Graph, rots: Var, beta: Var, with_vertices: bool) -> DiffMesh {
        let kp = self.shaped_keypoints(g, beta);
        let mut glob = vec![g.slice_rows(rots, 0, 1)];
        let mut pos = vec![g.slice_rows(kp, 0, 1)];
        let mut parents_rows: Vec<usize> = vec![0; 5];
        let mut parent_g = g.gather_rows(glob[0], &[0; 5]);
        let mut parent_p = g.gather_rows(pos[0], &[0; 5]);
        for level in LEVELS {
            let local = g.gather_rows(rots, &level);
            let gl = g.batch_matmul3(parent_g, local);
            let child_k = g.gather_rows(kp, &level);
            let par_k = g.gather_rows(kp, &parents_rows);
            let off = g.sub(child_k, par_k);
            let rot_off = g.batch_matvec3(parent_g, off);
            let p = g.add(parent_p, rot_off);
            glob.push(gl);
            pos.push(p);
            parents_rows = level.to_vec();
            parent_g = gl;
            parent_p = p;
        }
        let tip_k = g.gather_rows(kp, &TIPS);
        let par_k = g.gather_rows(kp, &parents_rows);
        let off = g.sub(tip_k, par_k);
        let rot_off = g.batch_matvec3(parent_g, off);
        let tips = g.add(parent_p, rot_off);

        // level-major rows back to joint order
        let order: Vec<usize> = {
            let mut o = vec![0usize; NUM_TREE_JOINTS];
            for (lvl, joints) in LEVELS.iter().enumerate() {
                for (f, j) in joints.iter().enumerate() {
                    o[*j] = 1 + lvl * 5 + f;
                }
            }
            o
        };
        let g_stack = g.concat_rows(&glob);
        let p_stack = g.concat_rows(&pos);
        let g_all = g.gather_rows(g_stack, &order);
        let p_all = g.gather_rows(p_stack, &order);
        let joints = g.concat_rows(&[p_all, tips]);
        if !with_vertices {
            return DiffMesh { joints, vertices: joints };
        }

        let tree_k = g.slice_rows(kp, 0, NUM_TREE_JOINTS);
        let gk = g.batch_matvec3(g_all, tree_k);
        let t = g.sub(p_all, gk);
        let a = g.concat_cols(&[g_all, t]);
        let w = g.constant(self.weights.clone());
        let blended = g.matmul(w, a);
        let br = g.slice_cols(blended, 0, 9);
        let bt = g.slice_cols(blended, 9, 12);
        let vbase = g.constant(self.vertices.clone());
        let vb = g.constant(self.vertex_basis.clone());
        let voff = g.matmul(beta, vb);
        let voff = g.reshape(voff, (NUM_VERTICES, 3));
        let shaped = g.add(vbase, voff);
        let rotated = g.batch_matvec3(br, shaped);
        let vertices = g.add(rotated, bt);
        DiffMesh { joints, vertices }
    }
}
