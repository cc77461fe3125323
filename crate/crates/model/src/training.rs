//! Expert and scene pretraining stand-ins, Stage 1 pose learning with
//! only the MANO head trainable, and Stage 2 sequence tuning.
//!
//! All randomness comes from one ChaCha stream seeded by
//! [`TrainConfig::seed`]; work is single-threaded and iterates parameters
//! in storage order, so a run is bit-reproducible.

use std::collections::BTreeMap;
use std::path::Path;

use hand3r_core::geometry::Vec3;
use hand3r_core::RigidTransform;
use hand3r_synth::SequenceSample;
use ndarray::Array2;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Tensor, Var};
use crate::losses::{stage1_graph, stage2_frame_graph, FrameTarget, HandTarget, LossBreakdown, LossWeights};
use crate::network::{FrameInput, Hand3R};
use crate::params::{ParamGroup, ParamId, ParamStore};
use crate::{Error, Result};

/// Training hyper-parameters, read from TOML. Missing keys take defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// 1 or 2.
    pub stage: u8,
    pub weights: LossWeights,
    pub learning_rate: f64,
    pub steps: usize,
    /// Hands per step (Stage 1, expert) or clips per step (Stage 2, scene).
    pub batch_size: usize,
    pub seed: u64,
    /// Frames per back-propagated clip.
    pub clip_len: usize,
    /// Maximum number of frames run without gradients before a clip.
    pub max_warmup: usize,
    /// Learning-rate multiplier of the scene encoder in Stage 2.
    pub scene_encoder_lr_scale: f64,
    /// Stage 1: start from a freshly initialized MANO head.
    pub reinit_mano_head: bool,
    /// Stage 2: also train the MANO head.
    pub train_mano_head: bool,
    /// Stage 2: set the translation bias to the mean training translation.
    pub init_transl_bias: bool,
    /// Overrides the stage's trainable groups.
    pub trainable: Option<Vec<ParamGroup>>,
    pub log_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            stage: 1,
            weights: LossWeights::default(),
            learning_rate: 1e-3,
            steps: 2000,
            batch_size: 16,
            seed: 0,
            clip_len: 3,
            max_warmup: 4,
            scene_encoder_lr_scale: 0.1,
            reinit_mano_head: false,
            train_mano_head: false,
            init_transl_bias: true,
            trainable: None,
            log_every: 100,
        }
    }
}

impl TrainConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: TrainConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.stage == 1 || self.stage == 2) {
            return Err(Error::Config(format!("stage must be 1 or 2, got {}", self.stage)));
        }
        self.weights.validate()?;
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if self.batch_size == 0 || self.clip_len == 0 {
            return Err(Error::Config("batch_size and clip_len must be positive".into()));
        }
        if !(self.scene_encoder_lr_scale >= 0.0) {
            return Err(Error::Config("scene_encoder_lr_scale must be >= 0".into()));
        }
        Ok(())
    }

    /// Groups updated by this stage.
    pub fn trainable_groups(&self) -> Vec<ParamGroup> {
        use ParamGroup::*;
        if let Some(t) = &self.trainable {
            return t.clone();
        }
        match self.stage {
            1 => vec![ManoHead],
            _ => {
                let mut g = vec![SceneEncoder, Prompt, Decoder, TranslHead, SceneHead, CameraHead];
                if self.train_mano_head {
                    g.push(ManoHead);
                }
                g
            }
        }
    }
}

/// One row of the loss trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub step: usize,
    #[serde(flatten)]
    pub loss: LossBreakdown,
}

pub fn write_trace_csv(trace: &[TraceRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::format(path, e.to_string()))?;
    let mut header = vec!["step"];
    header.extend(LossBreakdown::TERMS);
    w.write_record(&header).map_err(|e| Error::format(path, e.to_string()))?;
    for r in trace {
        let mut row = vec![r.step.to_string()];
        row.extend(r.loss.values().iter().map(|v| format!("{v:e}")));
        w.write_record(&row).map_err(|e| Error::format(path, e.to_string()))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Adam with fixed step size and per-group learning-rate multipliers.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub group_scale: BTreeMap<ParamGroup, f64>,
    t: i32,
    m: Vec<Option<Tensor>>,
    v: Vec<Option<Tensor>>,
}

impl Adam {
    pub fn new(lr: f64, n_params: usize) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            group_scale: BTreeMap::new(),
            t: 0,
            m: vec![None; n_params],
            v: vec![None; n_params],
        }
    }

    /// Applies one update to every trainable parameter with a gradient.
    pub fn step(&mut self, store: &mut ParamStore, grads: &[Option<Tensor>]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        let ids: Vec<ParamId> = store.ids().collect();
        for id in ids {
            let Some(g) = &grads[id.0] else { continue };
            if !store.is_trainable(id) {
                continue;
            }
            let lr = self.lr * self.group_scale.get(&store.get(id).group).copied().unwrap_or(1.0);
            if lr == 0.0 {
                continue;
            }
            let m = self.m[id.0].get_or_insert_with(|| Array2::zeros(g.dim()));
            let v = self.v[id.0].get_or_insert_with(|| Array2::zeros(g.dim()));
            let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
            ndarray::Zip::from(store.value_mut(id)).and(&mut *m).and(&mut *v).and(g).for_each(|p, m, v, &g| {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
            });
        }
    }
}

/// Per-parameter gradient sums over a minibatch.
pub struct GradAcc(pub Vec<Option<Tensor>>);

impl GradAcc {
    pub fn new(n: usize) -> Self {
        Self(vec![None; n])
    }

    /// Adds `scale ·` the gradient of `out`.
    pub fn add(&mut self, g: &Graph, out: Var, scale: f64) {
        let grads = g.backward(out);
        for (id, t) in grads.params() {
            match &mut self.0[id.0] {
                Some(acc) => acc.scaled_add(scale, t),
                slot @ None => *slot = Some(t * scale),
            }
        }
    }
}

fn check_finite(step: usize, b: &LossBreakdown) -> Result<()> {
    match b.non_finite_term() {
        Some(term) => Err(Error::NonFinite { step, term: term.into() }),
        None => Ok(()),
    }
}

// ---- hand samples ----

/// One prompted hand of one frame.
#[derive(Debug, Clone)]
pub struct HandSample {
    pub seq: usize,
    pub frame: usize,
    pub query: usize,
    /// Crop patches for the hand encoder.
    pub patches: Tensor,
    pub target: HandTarget,
}

/// Every prompted hand of a corpus, in (sequence, frame, slot) order.
pub fn hand_samples(model: &Hand3R, data: &[SequenceSample]) -> Result<Vec<HandSample>> {
    let mut out = Vec::new();
    for (si, seq) in data.iter().enumerate() {
        for (fi, rec) in seq.frames.iter().enumerate() {
            let input = FrameInput::from_record(rec);
            let target = FrameTarget::new(model, rec, &RigidTransform::identity())?;
            for (q, (query, t)) in input.hands.iter().zip(target.hands).enumerate() {
                let crop = model.hand_crop(&input.image, query)?;
                out.push(HandSample { seq: si, frame: fi, query: q, patches: model.hand_patches(&crop)?, target: t });
            }
        }
    }
    Ok(out)
}

/// Expert features of hand samples under the current hand encoder.
pub fn hand_features(model: &Hand3R, samples: &[HandSample]) -> Vec<Tensor> {
    samples
        .iter()
        .map(|s| {
            let mut g = Graph::new();
            let p = g.constant(s.patches.clone());
            let f = model.hand_feature(&mut g, p);
            g.value(f).clone()
        })
        .collect()
}

fn hand_step(
    model: &Hand3R,
    samples: &[HandSample],
    features: Option<&[Tensor]>,
    batch: &[usize],
    w: &LossWeights,
    acc: &mut GradAcc,
) -> LossBreakdown {
    let mut total = LossBreakdown::default();
    let k = 1.0 / batch.len() as f64;
    for &i in batch {
        let mut g = Graph::new();
        let f_h = match features {
            Some(f) => g.constant(f[i].clone()),
            None => {
                let p = g.constant(samples[i].patches.clone());
                model.hand_feature(&mut g, p)
            }
        };
        let raw = model.mano_raw(&mut g, f_h);
        let (rots, beta) = model.mano_decode(&mut g, raw);
        let (j, v) = stage1_graph(&mut g, model, rots, beta, &samples[i].target);
        let a = g.scale(j, w.lambda_joint);
        let b = g.scale(v, w.lambda_vert);
        let loss = g.add(a, b);
        let part = LossBreakdown { joint: g.scalar(j), vert: g.scalar(v), total: g.scalar(loss), ..Default::default() };
        total.add_scaled(&part, k);
        acc.add(&g, loss, k);
    }
    total
}

fn run_hand_training(
    model: &mut Hand3R,
    samples: &[HandSample],
    features: Option<&[Tensor]>,
    cfg: &TrainConfig,
) -> Result<Vec<TraceRow>> {
    if samples.is_empty() {
        return Err(Error::InvalidInput("no hand samples in the training data".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = Adam::new(cfg.learning_rate, model.store.len());
    let mut trace = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let batch: Vec<usize> = (0..cfg.batch_size).map(|_| rng.gen_range(0..samples.len())).collect();
        let mut acc = GradAcc::new(model.store.len());
        let loss = hand_step(model, samples, features, &batch, &cfg.weights, &mut acc);
        check_finite(step, &loss)?;
        adam.step(&mut model.store, &acc.0);
        if cfg.log_every > 0 && step % cfg.log_every == 0 {
            log::info!("step {step}: joint {:.3e} vert {:.3e}", loss.joint, loss.vert);
        }
        trace.push(TraceRow { step, loss });
    }
    Ok(trace)
}

/// Restores the freeze mask implied by the model config.
fn restore_freeze(model: &mut Hand3R) {
    model.store.train_only(&ParamGroup::ALL);
    model.store.set_frozen(ParamGroup::HandEncoder, model.config.freeze_hand_encoder);
}

/// Trains the hand encoder and MANO head together on root-relative joints
/// and vertices, producing the frozen expert used afterwards.
pub fn pretrain_expert(model: &mut Hand3R, data: &[SequenceSample], cfg: &TrainConfig) -> Result<Vec<TraceRow>> {
    let samples = hand_samples(model, data)?;
    pretrain_expert_samples(model, &samples, cfg)
}

/// [`pretrain_expert`] on precomputed samples, so large corpora can be
/// generated in chunks and dropped after cropping.
pub fn pretrain_expert_samples(model: &mut Hand3R, samples: &[HandSample], cfg: &TrainConfig) -> Result<Vec<TraceRow>> {
    cfg.validate()?;
    model.store.train_only(&[ParamGroup::HandEncoder, ParamGroup::ManoHead]);
    let r = run_hand_training(model, samples, None, cfg);
    restore_freeze(model);
    r
}

/// Synthetic corpus for expert pretraining, generated in chunks of
/// `sequences` sequences with base seeds `base_seed + chunk`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExpertCorpus {
    pub base_seed: u64,
    pub chunks: usize,
    pub sequences: usize,
    pub frames: usize,
    pub hands: usize,
}

impl Default for ExpertCorpus {
    fn default() -> Self {
        Self { base_seed: 1000, chunks: 40, sequences: 50, frames: 4, hands: 2 }
    }
}

/// Expert pretraining on a corpus generated at the model's resolution.
/// Only crops are kept, so memory stays bounded by the sample count.
pub fn pretrain_expert_generated(model: &mut Hand3R, corpus: &ExpertCorpus, cfg: &TrainConfig) -> Result<Vec<TraceRow>> {
    let gen = hand3r_synth::GenConfig {
        n_frames: corpus.frames,
        n_hands: corpus.hands,
        res: model.config.image_res,
        template_seed: model.config.template_seed,
        ..Default::default()
    };
    let mut samples = Vec::new();
    for chunk in 0..corpus.chunks as u64 {
        let data = hand3r_synth::generate_corpus(corpus.base_seed + chunk, corpus.sequences, &gen)?;
        samples.extend(hand_samples(model, &data)?);
    }
    log::info!("expert corpus: {} hand crops", samples.len());
    pretrain_expert_samples(model, &samples, cfg)
}

/// Stage 1: only the MANO head learns, from cached expert features.
pub fn train_stage1(model: &mut Hand3R, data: &[SequenceSample], cfg: &TrainConfig) -> Result<Vec<TraceRow>> {
    cfg.validate()?;
    let groups = cfg.trainable_groups();
    if groups.contains(&ParamGroup::HandEncoder) {
        return Err(Error::Config("the hand encoder stays frozen in Stage 1".into()));
    }
    if cfg.reinit_mano_head {
        model.reset_mano_head();
    }
    let samples = hand_samples(model, data)?;
    let features = hand_features(model, &samples);
    model.store.train_only(&groups);
    let r = run_hand_training(model, &samples, Some(&features), cfg);
    restore_freeze(model);
    r
}

// ---- sequence clips ----

/// Per-frame inputs with cached expert features.
struct SeqFrames {
    inputs: Vec<FrameInput>,
    features: Vec<Vec<Tensor>>,
}

fn seq_frames(model: &Hand3R, seq: &SequenceSample, with_hands: bool) -> Result<SeqFrames> {
    let mut inputs = Vec::with_capacity(seq.frames.len());
    let mut features = Vec::with_capacity(seq.frames.len());
    for rec in &seq.frames {
        let mut input = FrameInput::from_record(rec);
        if !with_hands {
            input.hands.clear();
        }
        let f = input.hands.iter().map(|q| model.hand_feature_value(&input.image, q)).collect::<Result<Vec<_>>>()?;
        inputs.push(input);
        features.push(f);
    }
    Ok(SeqFrames { inputs, features })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Clip {
    pub seq: usize,
    /// First frame of the run; the camera reference.
    pub run_start: usize,
    /// First frame with gradients.
    pub start: usize,
    pub len: usize,
}

pub fn sample_clip(rng: &mut ChaCha8Rng, n_seqs: usize, n_frames: usize, cfg: &TrainConfig) -> Clip {
    let seq = rng.gen_range(0..n_seqs);
    let len = cfg.clip_len.min(n_frames);
    let start = rng.gen_range(0..=n_frames - len);
    let warm = rng.gen_range(0..=cfg.max_warmup).min(start);
    Clip { seq, run_start: start - warm, start, len }
}

fn clip_loss(
    model: &Hand3R,
    seq: &SequenceSample,
    frames: &SeqFrames,
    clip: Clip,
    w: &LossWeights,
    acc: &mut GradAcc,
    k: f64,
) -> Result<LossBreakdown> {
    let reference = seq.frames[clip.run_start].cam_pose.clone();
    let mut state = model.initial_state().tokens;
    for f in clip.run_start..clip.start {
        let mut g = Graph::new();
        let s = g.constant(state);
        let nodes = model.frame_graph(&mut g, &frames.inputs[f], s, Some(&frames.features[f]))?;
        state = g.value(nodes.state).clone();
    }
    let mut g = Graph::new();
    let mut s = if clip.run_start == clip.start { model.initial_state_var(&mut g) } else { g.constant(state) };
    let mut total: Option<Var> = None;
    let mut parts = LossBreakdown::default();
    let kf = 1.0 / clip.len as f64;
    for f in clip.start..clip.start + clip.len {
        let input = &frames.inputs[f];
        let nodes = model.frame_graph(&mut g, input, s, Some(&frames.features[f]))?;
        let mut target = FrameTarget::new(model, &seq.frames[f], &reference)?;
        target.hands.truncate(input.hands.len());
        let (loss, b) = stage2_frame_graph(&mut g, model, &nodes, &target, input, w);
        parts.add_scaled(&b, kf);
        total = Some(match total {
            Some(t) => g.add(t, loss),
            None => loss,
        });
        s = nodes.state;
    }
    let total = total.expect("clip has frames");
    let total = g.scale(total, kf);
    acc.add(&g, total, k);
    Ok(parts)
}

fn run_clip_training(
    model: &mut Hand3R,
    data: &[SequenceSample],
    cfg: &TrainConfig,
    with_hands: bool,
    w: &LossWeights,
) -> Result<Vec<TraceRow>> {
    if data.is_empty() {
        return Err(Error::InvalidInput("no training sequences".into()));
    }
    let frames = data.iter().map(|s| seq_frames(model, s, with_hands)).collect::<Result<Vec<_>>>()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = Adam::new(cfg.learning_rate, model.store.len());
    adam.group_scale.insert(ParamGroup::SceneEncoder, cfg.scene_encoder_lr_scale);
    let mut trace = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let mut acc = GradAcc::new(model.store.len());
        let mut loss = LossBreakdown::default();
        let k = 1.0 / cfg.batch_size as f64;
        for _ in 0..cfg.batch_size {
            let seq = rng.gen_range(0..data.len());
            let mut clip = sample_clip(&mut rng, 1, data[seq].frames.len(), cfg);
            clip.seq = seq;
            let b = clip_loss(model, &data[seq], &frames[seq], clip, w, &mut acc, k)?;
            loss.add_scaled(&b, k);
        }
        check_finite(step, &loss)?;
        adam.step(&mut model.store, &acc.0);
        if cfg.log_every > 0 && step % cfg.log_every == 0 {
            log::info!(
                "step {step}: trans {:.3e} abs {:.3e} 2d {:.3e} pts {:.3e} cam {:.3e}",
                loss.trans,
                loss.abs,
                loss.l2d,
                loss.pts,
                loss.cam
            );
        }
        trace.push(TraceRow { step, loss });
    }
    Ok(trace)
}

/// Trains the scene branch alone (no prompts) on the pointmap and camera
/// terms, standing in for a pretrained reconstruction model.
pub fn pretrain_scene(model: &mut Hand3R, data: &[SequenceSample], cfg: &TrainConfig) -> Result<Vec<TraceRow>> {
    cfg.validate()?;
    use ParamGroup::*;
    model.store.train_only(&[SceneEncoder, Decoder, SceneHead, CameraHead]);
    let w = LossWeights { gamma: 1.0, ..cfg.weights.clone() };
    let cfg = TrainConfig { scene_encoder_lr_scale: 1.0, ..cfg.clone() };
    let r = run_clip_training(model, data, &cfg, false, &w);
    restore_freeze(model);
    r
}

/// Mean raw translation head output over every prompted hand, the bias
/// that places an average training hand.
pub fn transl_prior(model: &Hand3R, data: &[SequenceSample]) -> Option<[f64; 3]> {
    let mut sum = [0.0; 3];
    let mut n = 0usize;
    for seq in data {
        for rec in &seq.frames {
            let input = FrameInput::from_record(rec);
            let w2c = rec.cam_pose.inverse();
            for (q, i) in crate::losses::prompted_annotations(rec).into_iter().enumerate() {
                let t = rec.hands[i].params.transformed(&model.template, &w2c).transl;
                if let Some(raw) = model.transl_raw(&input.hands[q], &rec.intrinsics, &t) {
                    for k in 0..3 {
                        sum[k] += raw[k];
                    }
                    n += 1;
                }
            }
        }
    }
    (n > 0).then(|| sum.map(|v| v / n as f64))
}

/// Mean camera-frame translation parameter over every prompted hand.
pub fn mean_translation(model: &Hand3R, data: &[SequenceSample]) -> Option<Vec3> {
    let mut sum = Vec3::zeros();
    let mut n = 0usize;
    for seq in data {
        for rec in &seq.frames {
            let w2c = rec.cam_pose.inverse();
            for i in crate::losses::prompted_annotations(rec) {
                sum += rec.hands[i].params.transformed(&model.template, &w2c).transl;
                n += 1;
            }
        }
    }
    (n > 0).then(|| sum / n as f64)
}

/// Stage 2: scene-aware tuning of the fused network on clips.
pub fn train_stage2(model: &mut Hand3R, data: &[SequenceSample], cfg: &TrainConfig) -> Result<Vec<TraceRow>> {
    cfg.validate()?;
    let groups = cfg.trainable_groups();
    if model.config.freeze_hand_encoder && groups.contains(&ParamGroup::HandEncoder) {
        return Err(Error::Config("freeze_hand_encoder is set but the hand encoder is listed as trainable".into()));
    }
    if cfg.init_transl_bias {
        if let Some(raw) = transl_prior(model, data) {
            model.set_transl_bias(raw);
        }
    }
    model.store.train_only(&groups);
    let r = run_clip_training(model, data, cfg, true, &cfg.weights);
    restore_freeze(model);
    r
}

/// Dispatches on [`TrainConfig::stage`].
pub fn train(model: &mut Hand3R, data: &[SequenceSample], cfg: &TrainConfig) -> Result<Vec<TraceRow>> {
    match cfg.stage {
        1 => train_stage1(model, data, cfg),
        2 => train_stage2(model, data, cfg),
        s => Err(Error::Config(format!("stage must be 1 or 2, got {s}"))),
    }
}
