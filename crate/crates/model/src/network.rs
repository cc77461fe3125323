//! Dual-stream hand-scene network: a scene encoder over the full frame, a
//! hand expert encoder over per-hand crops, prompt fusion, a recurrent
//! decoder over `[prompts, scene tokens, state]` and four decoupled heads.

use hand3r_core::geometry::{crop_transform, region_pool_weights, Mat3, Vec2, Vec3};
use hand3r_core::handmodel::{forward_kinematics_rotmats, mirror_rotation, NUM_POSE_JOINTS, NUM_SHAPE, NUM_TREE_JOINTS};
use hand3r_core::{
    BBox, CameraIntrinsics, HandMesh, HandParams, HandTemplate, Handedness, Image, PointMap, RigidTransform, TokenGrid,
};
use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Graph, Tensor, Unary, Var};
use crate::config::ModelConfig;
use crate::handfk::{rot6d_rows, DiffHand};
use crate::nn::{Block, LayerNorm, Linear};
use crate::params::{Init, ParamGroup, ParamId, ParamStore};
use crate::{Error, Result};

/// Depth the scene head predicts before training (meters).
pub const DEPTH_PRIOR: f64 = 0.8;
/// Raw confidence bias giving `softplus(x) ≈ 1`.
const CONF_BIAS: f64 = 0.541_324_854_612_918_1;
pub const CONF_FLOOR: f64 = 1e-6;
/// Metric side length of a hand crop before the translation head is fit.
const CROP_EXTENT_PRIOR: f64 = 0.25;
const MANO_OUT: usize = NUM_TREE_JOINTS * 6 + NUM_SHAPE;
const IDENTITY_6D: [f64; 6] = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0];

/// Patch embedding, learned positions, pre-norm blocks and a final norm.
#[derive(Debug, Clone)]
pub struct Encoder {
    patch: Linear,
    pos: ParamId,
    blocks: Vec<Block>,
    ln: LayerNorm,
}

impl Encoder {
    #[allow(clippy::too_many_arguments)]
    fn new(
        store: &mut ParamStore,
        name: &str,
        group: ParamGroup,
        n_tokens: usize,
        patch_dim: usize,
        layers: usize,
        cfg: &ModelConfig,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let d = cfg.token_dim;
        Self {
            patch: Linear::new(store, &format!("{name}.patch"), group, patch_dim, d, rng),
            pos: store.add(&format!("{name}.pos"), group, (n_tokens, d), Init::Uniform(0.5), rng),
            blocks: (0..layers)
                .map(|i| Block::new(store, &format!("{name}.block{i}"), group, d, cfg.n_heads, cfg.mlp_ratio, rng))
                .collect(),
            ln: LayerNorm::new(store, &format!("{name}.ln"), group, d, rng),
        }
    }

    fn forward(&self, g: &mut Graph, store: &ParamStore, patches: Var) -> Var {
        let x = self.patch.forward(g, store, patches);
        let pos = g.param(store, self.pos);
        let mut x = g.add(x, pos);
        for b in &self.blocks {
            x = b.forward(g, store, x);
        }
        self.ln.forward(g, store, x)
    }
}

/// Persistent decoder memory carried between frames.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneState {
    /// `state_len × token_dim`.
    pub tokens: Tensor,
    /// Number of frames consumed so far.
    pub frame: usize,
}

/// One hand to prompt: ground-truth side and pixel box.
#[derive(Debug, Clone, PartialEq)]
pub struct HandQuery {
    pub handedness: Handedness,
    pub bbox: BBox,
}

#[derive(Debug, Clone)]
pub struct FrameInput {
    pub image: Image,
    pub intrinsics: CameraIntrinsics,
    pub hands: Vec<HandQuery>,
}

impl FrameInput {
    /// Prompts every annotated hand whose box overlaps the image.
    pub fn from_record(rec: &hand3r_synth::FrameRecord) -> Self {
        let res = rec.res();
        let hands = rec
            .hands
            .iter()
            .filter(|h| h.bbox.intersects_image(res, res))
            .map(|h| HandQuery { handedness: h.params.handedness, bbox: h.bbox })
            .collect();
        Self { image: rec.image.clone(), intrinsics: rec.intrinsics, hands }
    }
}

/// Graph nodes of one prompted hand.
#[derive(Debug, Clone, Copy)]
pub struct HandNodes {
    /// Index into [`FrameInput::hands`].
    pub query: usize,
    pub handedness: Handedness,
    pub f_h: Var,
    pub f_s: Var,
    pub prompt: Var,
    pub fused: Var,
    /// `16×9` rotations (global orientation first) of the right-hand
    /// model; left hands are mirrored afterwards.
    pub rots: Var,
    pub beta: Var,
    /// `1×3` camera-frame translation parameter.
    pub transl: Var,
}

/// Graph nodes of one frame.
#[derive(Debug, Clone)]
pub struct FrameNodes {
    /// Hands in slot order.
    pub hands: Vec<HandNodes>,
    pub scene_tokens: Var,
    /// `N×1` depth per pixel in token-major order.
    pub depth: Var,
    /// `N×3` camera-frame points, token-major.
    pub points: Var,
    /// `N×1` positive confidence, token-major.
    pub conf: Var,
    /// `1×9` row-major rotation of the camera pose.
    pub cam_rot: Var,
    pub cam_t: Var,
    pub state: Var,
}

pub struct Decoded {
    pub fused: Vec<Var>,
    pub grid: Var,
    pub state: Var,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HandPrediction {
    pub query: usize,
    pub handedness: Handedness,
    /// Camera-frame parameters.
    pub params: HandParams,
    pub mesh_cam: HandMesh,
    /// `cam_pose ∘ mesh_cam`.
    pub mesh_world: HandMesh,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenePrediction {
    pub pointmap: PointMap,
    /// Per pixel, row-major.
    pub confidence: Vec<f64>,
    /// Camera-to-world, world being the first camera of the run.
    pub cam_pose: RigidTransform,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FramePrediction {
    pub scene: ScenePrediction,
    pub hands: Vec<HandPrediction>,
}

#[derive(Debug, Clone)]
pub struct Hand3R {
    pub config: ModelConfig,
    pub store: ParamStore,
    pub template: HandTemplate,
    diff_hand: DiffHand,
    scene_encoder: Encoder,
    hand_encoder: Encoder,
    prompt_fc1: Linear,
    prompt_fc2: Linear,
    type_prompt: ParamId,
    type_scene: ParamId,
    type_state: ParamId,
    state_init: ParamId,
    decoder: Vec<Block>,
    decoder_ln: LayerNorm,
    mano_head: Linear,
    transl_head: Linear,
    scene_head: Linear,
    camera_head: Linear,
}

impl Hand3R {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let c = &config;
        let d = c.token_dim;
        let mut rng = ChaCha8Rng::seed_from_u64(c.init_seed);
        let mut s = ParamStore::new();
        let rng = &mut rng;
        use ParamGroup::*;
        let sp = c.scene_patch();
        let scene_encoder = Encoder::new(&mut s, "scene_enc", SceneEncoder, c.n_scene_tokens(), sp * sp * 3, c.n_encoder_layers, c, rng);
        let hand_encoder = Encoder::new(
            &mut s,
            "hand_enc",
            HandEncoder,
            c.n_hand_tokens(),
            c.hand_patch * c.hand_patch * 3,
            c.n_hand_layers,
            c,
            rng,
        );
        let prompt_fc1 = Linear::new(&mut s, "prompt.fc1", Prompt, 2 * d, d, rng);
        let prompt_fc2 = Linear::new(&mut s, "prompt.fc2", Prompt, d, d, rng);
        let type_prompt = s.add("decoder.type_prompt", Decoder, (1, d), Init::Uniform(0.5), rng);
        let type_scene = s.add("decoder.type_scene", Decoder, (1, d), Init::Uniform(0.5), rng);
        let type_state = s.add("decoder.type_state", Decoder, (1, d), Init::Uniform(0.5), rng);
        let state_init = s.add("decoder.state_init", Decoder, (c.state_len, d), Init::Uniform(1.0), rng);
        let decoder = (0..c.n_decoder_layers)
            .map(|i| Block::new(&mut s, &format!("decoder.block{i}"), Decoder, d, c.n_heads, c.mlp_ratio, rng))
            .collect();
        let decoder_ln = LayerNorm::new(&mut s, "decoder.ln", Decoder, d, rng);
        let mano_head = Linear::with_init(&mut s, "head_mano", ManoHead, (d, MANO_OUT), Init::Zeros, rng);
        let transl_head = Linear::with_init(&mut s, "head_transl", TranslHead, (d, 3), Init::Uniform(0.01 / (d as f64).sqrt()), rng);
        let scene_head =
            Linear::with_init(&mut s, "head_scene", SceneHead, (d, sp * sp * 2), Init::Uniform(0.1 / (d as f64).sqrt()), rng);
        let camera_head = Linear::with_init(&mut s, "head_camera", CameraHead, (d, 9), Init::Uniform(0.01 / (d as f64).sqrt()), rng);
        let mut model = Self {
            diff_hand: DiffHand::new(&HandTemplate::build(c.template_seed)),
            template: HandTemplate::build(c.template_seed),
            config,
            store: s,
            scene_encoder,
            hand_encoder,
            prompt_fc1,
            prompt_fc2,
            type_prompt,
            type_scene,
            type_state,
            state_init,
            decoder,
            decoder_ln,
            mano_head,
            transl_head,
            scene_head,
            camera_head,
        };
        model.reset_mano_head();
        model.reset_scene_head_bias();
        model.set_transl_bias([CROP_EXTENT_PRIOR.ln(), 0.0, 0.0]);
        let cam_b = model.store.value_mut(model.camera_head.b);
        for (k, v) in IDENTITY_6D.iter().enumerate() {
            cam_b[[0, k]] = *v;
        }
        if model.config.freeze_hand_encoder {
            model.store.set_frozen(HandEncoder, true);
        }
        Ok(model)
    }

    /// Zero weights and a bias decoding to the rest pose with mean shape.
    pub fn reset_mano_head(&mut self) {
        self.store.value_mut(self.mano_head.w).fill(0.0);
        let b = self.store.value_mut(self.mano_head.b);
        b.fill(0.0);
        for j in 0..NUM_TREE_JOINTS {
            for (k, v) in IDENTITY_6D.iter().enumerate() {
                b[[0, 6 * j + k]] = *v;
            }
        }
    }

    fn reset_scene_head_bias(&mut self) {
        let b = self.store.value_mut(self.scene_head.b);
        for k in 0..b.ncols() / 2 {
            b[[0, 2 * k]] = DEPTH_PRIOR;
            b[[0, 2 * k + 1]] = CONF_BIAS;
        }
    }

    /// Sets the raw translation head bias `(log scale, u, v)`.
    pub fn set_transl_bias(&mut self, raw: [f64; 3]) {
        let b = self.store.value_mut(self.transl_head.b);
        for (k, v) in raw.iter().enumerate() {
            b[[0, k]] = *v;
        }
    }

    pub fn transl_bias(&self) -> [f64; 3] {
        let b = self.store.value(self.transl_head.b);
        [b[[0, 0]], b[[0, 1]], b[[0, 2]]]
    }

    /// Inverse of [`Hand3R::transl`]: the raw head output that places a
    /// hand at camera-frame translation `t`. `None` if `t` is not in front
    /// of the camera.
    pub fn transl_raw(&self, query: &HandQuery, k: &CameraIntrinsics, t: &Vec3) -> Option<[f64; 3]> {
        if !(t.z > 0.0) {
            return None;
        }
        let side = self.crop_side(&query.bbox);
        let a = (t.z * side / k.fx).ln();
        let u = (k.fx * t.x / t.z + k.cx - query.bbox.center.x) / side;
        let v = (k.fy * t.y / t.z + k.cy - query.bbox.center.y) / side;
        let u = if query.handedness == Handedness::Left { -u } else { u };
        Some([a, u, v])
    }

    fn crop_side(&self, bbox: &BBox) -> f64 {
        self.config.crop_expansion * bbox.size.x.max(bbox.size.y)
    }

    pub fn diff_hand(&self) -> &DiffHand {
        &self.diff_hand
    }

    // ---- inputs ----

    /// Flattens `patch × patch` blocks (row-major blocks, pixels row-major
    /// within a block, RGB interleaved) and centers values at zero.
    pub fn patchify(image: &Image, patch: usize) -> Tensor {
        let (gw, gh) = (image.width / patch, image.height / patch);
        let mut out = Array2::zeros((gw * gh, patch * patch * 3));
        for t in 0..gw * gh {
            let (tr, tc) = (t / gw, t % gw);
            for y in 0..patch {
                for x in 0..patch {
                    let px = image.pixel(tc * patch + x, tr * patch + y);
                    for c in 0..3 {
                        out[[t, (y * patch + x) * 3 + c]] = px[c] as f64 - 0.5;
                    }
                }
            }
        }
        out
    }

    pub fn scene_patches(&self, image: &Image) -> Result<Tensor> {
        let r = self.config.image_res;
        if image.width != r || image.height != r {
            return Err(Error::InvalidInput(format!(
                "scene encoder expects {r}×{r} images, got {}×{}",
                image.width, image.height
            )));
        }
        Ok(Self::patchify(image, self.config.scene_patch()))
    }

    /// Square crop around the box; left hands are flipped to look right.
    pub fn hand_crop(&self, image: &Image, query: &HandQuery) -> Result<Image> {
        let (crop, _) = crop_transform(image, &query.bbox, self.config.hand_crop_res, self.config.crop_expansion)?;
        Ok(match query.handedness {
            Handedness::Left => crop.flip_horizontal(),
            Handedness::Right => crop,
        })
    }

    pub fn hand_patches(&self, crop: &Image) -> Result<Tensor> {
        let r = self.config.hand_crop_res;
        if crop.width != r || crop.height != r {
            return Err(Error::InvalidInput(format!("hand encoder expects {r}×{r} crops, got {}×{}", crop.width, crop.height)));
        }
        Ok(Self::patchify(crop, self.config.hand_patch))
    }

    /// `1×G` averaging row selecting the scene tokens under `bbox`.
    pub fn pool_row(&self, bbox: &BBox) -> Tensor {
        let n = self.config.grid_size;
        let ppt = self.config.scene_patch() as f64;
        let mut row = Array2::zeros((1, n * n));
        for (i, w) in region_pool_weights(n, n, &Vec2::new(ppt, ppt), bbox) {
            row[[0, i]] = w;
        }
        row
    }

    /// Slot order: left before right, then by box center x.
    pub fn slot_order(hands: &[HandQuery]) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..hands.len()).collect();
        idx.sort_by(|&a, &b| {
            (hands[a].handedness, hands[a].bbox.center.x)
                .partial_cmp(&(hands[b].handedness, hands[b].bbox.center.x))
                .unwrap_or(std::cmp::Ordering::Equal)
        });
        idx
    }

    // ---- graph building blocks ----

    /// `G×768`-style patches to `G×d` scene tokens.
    pub fn scene_tokens(&self, g: &mut Graph, patches: Var) -> Var {
        self.scene_encoder.forward(g, &self.store, patches)
    }

    /// Hand patches to the `1×d` expert feature.
    pub fn hand_feature(&self, g: &mut Graph, patches: Var) -> Var {
        let x = self.hand_encoder.forward(g, &self.store, patches);
        g.mean_cols(x)
    }

    pub fn prompt(&self, g: &mut Graph, f_h: Var, f_s: Var) -> Result<Var> {
        let d = self.config.token_dim;
        if g.shape(f_h) != (1, d) || g.shape(f_s) != (1, d) {
            return Err(Error::InvalidInput(format!(
                "prompt inputs must be 1×{d}, got {:?} and {:?}",
                g.shape(f_h),
                g.shape(f_s)
            )));
        }
        let x = g.concat_cols(&[f_h, f_s]);
        let h = self.prompt_fc1.forward(g, &self.store, x);
        let h = g.gelu(h);
        Ok(self.prompt_fc2.forward(g, &self.store, h))
    }

    pub fn initial_state_var(&self, g: &mut Graph) -> Var {
        g.param(&self.store, self.state_init)
    }

    /// Joint attention over `[prompts, grid, state]`. Outputs keep the
    /// prompt order; the new state is the layer-normalized state rows.
    pub fn decode(&self, g: &mut Graph, prompts: &[Var], grid: Var, state: Var) -> Result<Decoded> {
        if prompts.len() > self.config.max_hands {
            return Err(Error::Capacity { got: prompts.len(), max: self.config.max_hands });
        }
        let (tp, ts, tst) = (
            g.param(&self.store, self.type_prompt),
            g.param(&self.store, self.type_scene),
            g.param(&self.store, self.type_state),
        );
        let mut rows: Vec<Var> = prompts.iter().map(|p| g.add(*p, tp)).collect();
        rows.push(g.add(grid, ts));
        rows.push(g.add(state, tst));
        let mut x = g.concat_rows(&rows);
        for b in &self.decoder {
            x = b.forward(g, &self.store, x);
        }
        let p = prompts.len();
        let n_grid = g.shape(grid).0;
        let total = g.shape(x).0;
        let state_rows = g.slice_rows(x, p + n_grid, total);
        let state = g.layer_norm_rows(state_rows, crate::nn::LN_EPS);
        let y = self.decoder_ln.forward(g, &self.store, x);
        let fused = (0..p).map(|i| g.slice_rows(y, i, i + 1)).collect();
        let grid = g.slice_rows(y, p, p + n_grid);
        Ok(Decoded { fused, grid, state })
    }

    /// `1×106` raw output: 16 6D rotations then shape.
    pub fn mano_raw(&self, g: &mut Graph, f_h: Var) -> Var {
        self.mano_head.forward(g, &self.store, f_h)
    }

    /// Splits the raw MANO output into `16×9` rotations and `1×10` shape.
    pub fn mano_decode(&self, g: &mut Graph, raw: Var) -> (Var, Var) {
        let r6 = g.slice_cols(raw, 0, NUM_TREE_JOINTS * 6);
        let r6 = g.reshape(r6, (NUM_TREE_JOINTS, 6));
        let rots = rot6d_rows(g, r6);
        let beta = g.slice_cols(raw, NUM_TREE_JOINTS * 6, MANO_OUT);
        (rots, beta)
    }

    /// `1×3` camera-frame translation. The head predicts a crop camera:
    /// depth `exp(a)·f/side` and the projected offset `(u, v)·side` from the
    /// box center, with `u` mirrored for left hands.
    pub fn transl(&self, g: &mut Graph, fused: Var, query: &HandQuery, k: &CameraIntrinsics) -> Var {
        let raw = self.transl_head.forward(g, &self.store, fused);
        let side = self.crop_side(&query.bbox);
        let a = g.slice_cols(raw, 0, 1);
        let a = g.unary(a, Unary::Exp);
        let z = g.scale(a, k.fx / side);
        let uv = g.slice_cols(raw, 1, 3);
        let su = if query.handedness == Handedness::Left { -side / k.fx } else { side / k.fx };
        let s = g.constant(Array2::from_shape_vec((1, 2), vec![su, side / k.fy]).expect("row"));
        let uv = g.mul(uv, s);
        let c = &query.bbox.center;
        let c = g.constant(Array2::from_shape_vec((1, 2), vec![(c.x - k.cx) / k.fx, (c.y - k.cy) / k.fy]).expect("row"));
        let xy = g.add(uv, c);
        let one = g.constant(Array2::ones((1, 1)));
        let ray = g.concat_cols(&[xy, one]);
        g.mul(z, ray)
    }

    /// Per-pixel depth and confidence from the refined grid, both `N×1`
    /// in token-major pixel order.
    pub fn scene_depth_conf(&self, g: &mut Graph, grid: Var) -> (Var, Var) {
        let raw = self.scene_head.forward(g, &self.store, grid);
        let (n, m) = g.shape(raw);
        let raw = g.reshape(raw, (n * m / 2, 2));
        let depth = g.slice_cols(raw, 0, 1);
        let c = g.slice_cols(raw, 1, 2);
        let c = g.softplus(c);
        let conf = g.offset(c, CONF_FLOOR);
        (depth, conf)
    }

    /// Unit-depth rays of every pixel in token-major order.
    pub fn pixel_rays(&self, k: &CameraIntrinsics) -> Tensor {
        let order = self.token_major_pixels();
        let r = self.config.image_res;
        Array2::from_shape_fn((order.len(), 3), |(i, c)| {
            let (row, col) = (order[i] / r, order[i] % r);
            match c {
                0 => (col as f64 + 0.5 - k.cx) / k.fx,
                1 => (row as f64 + 0.5 - k.cy) / k.fy,
                _ => 1.0,
            }
        })
    }

    /// Row-major image index of each token-major pixel.
    pub fn token_major_pixels(&self) -> Vec<usize> {
        let (n, p, r) = (self.config.grid_size, self.config.scene_patch(), self.config.image_res);
        let mut out = Vec::with_capacity(r * r);
        for t in 0..n * n {
            let (tr, tc) = (t / n, t % n);
            for y in 0..p {
                for x in 0..p {
                    out.push((tr * p + y) * r + tc * p + x);
                }
            }
        }
        out
    }

    /// `(1×9 rotation, 1×3 translation)` from state token 0.
    pub fn camera(&self, g: &mut Graph, state: Var) -> (Var, Var) {
        let s0 = g.slice_rows(state, 0, 1);
        let raw = self.camera_head.forward(g, &self.store, s0);
        let r6 = g.slice_cols(raw, 0, 6);
        let rot = rot6d_rows(g, r6);
        let t = g.slice_cols(raw, 6, 9);
        (rot, t)
    }

    /// Everything one frame contributes to the graph. `hand_features`, if
    /// given, replaces the hand encoder by constant features indexed like
    /// `frame.hands`.
    pub fn frame_graph(
        &self,
        g: &mut Graph,
        frame: &FrameInput,
        state: Var,
        hand_features: Option<&[Tensor]>,
    ) -> Result<FrameNodes> {
        if frame.hands.len() > self.config.max_hands {
            return Err(Error::Capacity { got: frame.hands.len(), max: self.config.max_hands });
        }
        let patches = self.scene_patches(&frame.image)?;
        let patches = g.constant(patches);
        let tokens = self.scene_tokens(g, patches);
        let slots = Self::slot_order(&frame.hands);
        let mut partial = Vec::with_capacity(slots.len());
        for &q in &slots {
            let query = &frame.hands[q];
            let f_h = match hand_features {
                Some(f) => g.constant(f[q].clone()),
                None => {
                    let crop = self.hand_crop(&frame.image, query)?;
                    let hp = g.constant(self.hand_patches(&crop)?);
                    self.hand_feature(g, hp)
                }
            };
            let w = g.constant(self.pool_row(&query.bbox));
            let f_s = g.matmul(w, tokens);
            let prompt = self.prompt(g, f_h, f_s)?;
            partial.push((q, query.handedness, f_h, f_s, prompt));
        }
        let prompts: Vec<Var> = partial.iter().map(|p| p.4).collect();
        let dec = self.decode(g, &prompts, tokens, state)?;
        let mut hands = Vec::with_capacity(partial.len());
        for ((query, handedness, f_h, f_s, prompt), fused) in partial.into_iter().zip(dec.fused) {
            let raw = self.mano_raw(g, f_h);
            let (rots, beta) = self.mano_decode(g, raw);
            let transl = self.transl(g, fused, &frame.hands[query], &frame.intrinsics);
            hands.push(HandNodes { query, handedness, f_h, f_s, prompt, fused, rots, beta, transl });
        }
        let (depth, conf) = self.scene_depth_conf(g, dec.grid);
        let rays = g.constant(self.pixel_rays(&frame.intrinsics));
        let points = g.mul(depth, rays);
        let (cam_rot, cam_t) = self.camera(g, dec.state);
        Ok(FrameNodes { hands, scene_tokens: tokens, depth, points, conf, cam_rot, cam_t, state: dec.state })
    }

    // ---- value-level API ----

    pub fn initial_state(&self) -> SceneState {
        SceneState { tokens: self.store.value(self.state_init).clone(), frame: 0 }
    }

    pub fn encode_scene(&self, image: &Image) -> Result<TokenGrid> {
        let mut g = Graph::new();
        let p = g.constant(self.scene_patches(image)?);
        let t = self.scene_tokens(&mut g, p);
        let n = self.config.grid_size;
        let ppt = self.config.scene_patch() as f64;
        Ok(TokenGrid::new(n, n, self.config.token_dim, Vec2::new(ppt, ppt), g.value(t).iter().copied().collect())?)
    }

    pub fn encode_hand(&self, crop: &Image) -> Result<Vec<f64>> {
        let mut g = Graph::new();
        let p = g.constant(self.hand_patches(crop)?);
        let f = self.hand_feature(&mut g, p);
        Ok(g.value(f).iter().copied().collect())
    }

    /// Expert feature of a hand in a full frame (crop, flip, encode).
    pub fn hand_feature_value(&self, image: &Image, query: &HandQuery) -> Result<Tensor> {
        let crop = self.hand_crop(image, query)?;
        let f = self.encode_hand(&crop)?;
        Ok(Array2::from_shape_vec((1, f.len()), f).expect("feature shape"))
    }

    pub fn build_prompt(&self, f_h: &[f64], f_s: &[f64]) -> Result<Vec<f64>> {
        let mut g = Graph::new();
        let a = g.constant(Array2::from_shape_vec((1, f_h.len()), f_h.to_vec()).expect("row"));
        let b = g.constant(Array2::from_shape_vec((1, f_s.len()), f_s.to_vec()).expect("row"));
        let p = self.prompt(&mut g, a, b)?;
        Ok(g.value(p).iter().copied().collect())
    }

    /// Decodes MANO parameters from an expert feature. Left hands are the
    /// mirror image of the right-hand prediction.
    pub fn head_mano(&self, f_h: &[f64], handedness: Handedness) -> HandParams {
        let mut g = Graph::new();
        let f = g.constant(Array2::from_shape_vec((1, f_h.len()), f_h.to_vec()).expect("row"));
        let raw = self.mano_raw(&mut g, f);
        let (rots, beta) = self.mano_decode(&mut g, raw);
        let (orient, rots, beta) = rot_values(g.value(rots), g.value(beta), handedness);
        params_from(&orient, &rots, &beta, Vec3::zeros(), handedness)
    }

    /// One online step.
    pub fn step(&self, frame: &FrameInput, state: &SceneState) -> Result<(FramePrediction, SceneState)> {
        let mut g = Graph::new();
        let s = g.constant(state.tokens.clone());
        let nodes = self.frame_graph(&mut g, frame, s, None)?;
        let pred = self.read_frame(&g, &nodes, frame)?;
        Ok((pred, SceneState { tokens: g.value(nodes.state).clone(), frame: state.frame + 1 }))
    }

    /// Strictly causal pass over a sequence from the learned initial state.
    pub fn forward_online(&self, frames: &[FrameInput]) -> Result<Vec<FramePrediction>> {
        if frames.is_empty() {
            return Err(Error::InvalidInput("empty frame sequence".into()));
        }
        let mut state = self.initial_state();
        let mut out = Vec::with_capacity(frames.len());
        for f in frames {
            let (p, s) = self.step(f, &state)?;
            out.push(p);
            state = s;
        }
        Ok(out)
    }

    /// Converts evaluated frame nodes into predictions.
    pub fn read_frame(&self, g: &Graph, nodes: &FrameNodes, frame: &FrameInput) -> Result<FramePrediction> {
        let r = self.config.image_res;
        let order = self.token_major_pixels();
        let mut points = vec![Vec3::zeros(); r * r];
        let mut confidence = vec![0.0; r * r];
        let (pv, cv) = (g.value(nodes.points), g.value(nodes.conf));
        for (i, &pix) in order.iter().enumerate() {
            points[pix] = Vec3::new(pv[[i, 0]], pv[[i, 1]], pv[[i, 2]]);
            confidence[pix] = cv[[i, 0]];
        }
        let valid = points.iter().map(|p| p.iter().all(|v| v.is_finite())).collect();
        let cam_pose = RigidTransform::new(mat_row(g.value(nodes.cam_rot), 0), row3(g.value(nodes.cam_t)));
        let mut hands = Vec::with_capacity(nodes.hands.len());
        for h in &nodes.hands {
            let (orient, rots, beta) = rot_values(g.value(h.rots), g.value(h.beta), h.handedness);
            let transl = row3(g.value(h.transl));
            let mesh_cam = forward_kinematics_rotmats(&self.template, h.handedness, &orient, &rots, &beta, &transl)?;
            let mesh_world = mesh_cam.transformed(&cam_pose);
            hands.push(HandPrediction {
                query: h.query,
                handedness: h.handedness,
                params: params_from(&orient, &rots, &beta, transl, h.handedness),
                mesh_cam,
                mesh_world,
            });
        }
        debug_assert_eq!(hands.len(), frame.hands.len());
        Ok(FramePrediction { scene: ScenePrediction { pointmap: PointMap { width: r, height: r, points, valid }, confidence, cam_pose }, hands })
    }

    pub fn mano_head_ids(&self) -> [ParamId; 2] {
        [self.mano_head.w, self.mano_head.b]
    }
}

fn row3(t: &Tensor) -> Vec3 {
    Vec3::new(t[[0, 0]], t[[0, 1]], t[[0, 2]])
}

fn mat_row(t: &Tensor, i: usize) -> Mat3 {
    Mat3::from_fn(|r, c| t[[i, 3 * r + c]])
}

/// Actual-side rotations and shape from right-hand model outputs.
fn rot_values(rots: &Tensor, beta: &Tensor, side: Handedness) -> (Mat3, [Mat3; NUM_POSE_JOINTS], [f64; NUM_SHAPE]) {
    let fix = |m: Mat3| match side {
        Handedness::Right => m,
        Handedness::Left => mirror_rotation(&m),
    };
    let orient = fix(mat_row(rots, 0));
    let r = std::array::from_fn(|j| fix(mat_row(rots, j + 1)));
    (orient, r, std::array::from_fn(|k| beta[[0, k]]))
}

fn params_from(orient: &Mat3, rots: &[Mat3; NUM_POSE_JOINTS], beta: &[f64; NUM_SHAPE], transl: Vec3, side: Handedness) -> HandParams {
    use hand3r_core::geometry::matrix_to_axis_angle;
    HandParams {
        beta: *beta,
        theta: rots.map(|r| matrix_to_axis_angle(&r)),
        global_orient: matrix_to_axis_angle(orient),
        transl,
        handedness: side,
    }
}
