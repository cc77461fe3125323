//! Central finite-difference checks of reverse-mode gradients.
//!
//! The error of one tensor is `max|analytic − numeric| / max(max|analytic|,
//! max|numeric|, FLOOR)`.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use hand3r_synth::GenConfig;

use crate::autodiff::{Graph, Tensor, Unary, Var};
use crate::config::ModelConfig;
use crate::losses::{stage1_graph, stage2_frame_graph, FrameTarget, LossWeights};
use crate::network::{FrameInput, Hand3R};
use crate::handfk::{rot6d_rows, DiffHand};
use crate::nn::{Attention, Block, LayerNorm, Linear};
use crate::params::{ParamGroup, ParamId, ParamStore};

pub const STEP: f64 = 1e-6;
pub const FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: String,
    pub rel_err: f64,
    /// Entries compared.
    pub checked: usize,
}

fn rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff = analytic.iter().zip(numeric).map(|(a, n)| (a - n).abs()).fold(0.0, f64::max);
    let scale = analytic.iter().chain(numeric).map(|v| v.abs()).fold(FLOOR, f64::max);
    diff / scale
}

/// Weights that reduce an output tensor to a scalar, so every output entry
/// contributes with a distinct sensitivity.
fn projection(shape: (usize, usize), seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9);
    Array2::from_shape_fn(shape, |_| rng.gen_range(-1.0..1.0))
}

fn reduce(g: &mut Graph, out: Var, seed: u64) -> Var {
    let w = g.constant(projection(g.shape(out), seed));
    let p = g.mul(out, w);
    g.sum(p)
}

/// Checks `f` with respect to every entry of every input.
pub fn check_inputs<F>(name: &str, inputs: &[Tensor], f: F) -> CheckResult
where
    F: Fn(&mut Graph, &[Var]) -> Var,
{
    let eval = |xs: &[Tensor]| {
        let mut g = Graph::new();
        let vars: Vec<Var> = xs.iter().map(|x| g.input(x.clone())).collect();
        let out = f(&mut g, &vars);
        let s = reduce(&mut g, out, 7);
        (g, vars, s)
    };
    let (g, vars, s) = eval(inputs);
    let grads = g.backward(s);
    let mut analytic = Vec::new();
    let mut numeric = Vec::new();
    let mut xs = inputs.to_vec();
    for (k, v) in vars.iter().enumerate() {
        let ga = grads.of(*v).cloned().unwrap_or_else(|| Array2::zeros(inputs[k].dim()));
        for idx in 0..inputs[k].len() {
            let (r, c) = (idx / inputs[k].ncols(), idx % inputs[k].ncols());
            let x0 = xs[k][[r, c]];
            xs[k][[r, c]] = x0 + STEP;
            let (gp, _, sp) = eval(&xs);
            xs[k][[r, c]] = x0 - STEP;
            let (gm, _, sm) = eval(&xs);
            xs[k][[r, c]] = x0;
            analytic.push(ga[[r, c]]);
            numeric.push((gp.scalar(sp) - gm.scalar(sm)) / (2.0 * STEP));
        }
    }
    CheckResult { name: name.to_string(), rel_err: rel_err(&analytic, &numeric), checked: analytic.len() }
}

/// Checks a scalar loss built from `store` with respect to up to
/// `per_param` randomly chosen entries of each listed parameter. Every
/// group is unfrozen for the duration of the check.
pub fn check_params<F>(name: &str, store: &mut ParamStore, ids: &[ParamId], per_param: usize, seed: u64, loss: F) -> CheckResult
where
    F: Fn(&mut Graph, &ParamStore) -> Var,
{
    check_holder(name, store, |s| s, ids, per_param, seed, loss)
}

/// [`check_params`] for a loss built from the whole network.
pub fn check_model<F>(name: &str, model: &mut Hand3R, ids: &[ParamId], per_param: usize, seed: u64, loss: F) -> CheckResult
where
    F: Fn(&mut Graph, &Hand3R) -> Var,
{
    check_holder(name, model, |m| &mut m.store, ids, per_param, seed, loss)
}

fn check_holder<T, S, F>(name: &str, holder: &mut T, store: S, ids: &[ParamId], per_param: usize, seed: u64, loss: F) -> CheckResult
where
    S: Fn(&mut T) -> &mut ParamStore,
    F: Fn(&mut Graph, &T) -> Var,
{
    let frozen: Vec<ParamGroup> = ParamGroup::ALL.into_iter().filter(|g| store(holder).is_frozen(*g)).collect();
    store(holder).train_only(&ParamGroup::ALL);
    let mut g = Graph::new();
    let s = loss(&mut g, holder);
    let grads = g.backward(s);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut analytic = Vec::new();
    let mut numeric = Vec::new();
    let eval = |holder: &T| {
        let mut g = Graph::new();
        let s = loss(&mut g, holder);
        g.scalar(s)
    };
    for &id in ids {
        let (n, ncols) = (store(holder).value(id).len(), store(holder).value(id).ncols());
        let ga = grads.param(id).cloned().unwrap_or_else(|| Array2::zeros(store(holder).value(id).dim()));
        for _ in 0..per_param.min(n) {
            let idx = rng.gen_range(0..n);
            let (r, c) = (idx / ncols, idx % ncols);
            let x0 = store(holder).value(id)[[r, c]];
            store(holder).value_mut(id)[[r, c]] = x0 + STEP;
            let fp = eval(holder);
            store(holder).value_mut(id)[[r, c]] = x0 - STEP;
            let fm = eval(holder);
            store(holder).value_mut(id)[[r, c]] = x0;
            analytic.push(ga[[r, c]]);
            numeric.push((fp - fm) / (2.0 * STEP));
        }
    }
    for grp in frozen {
        store(holder).set_frozen(grp, true);
    }
    CheckResult { name: name.to_string(), rel_err: rel_err(&analytic, &numeric), checked: analytic.len() }
}

fn uniform(rng: &mut ChaCha8Rng, shape: (usize, usize), lo: f64, hi: f64) -> Tensor {
    Array2::from_shape_fn(shape, |_| rng.gen_range(lo..hi))
}

/// Every graph operation and layer, each on random inputs away from kinks.
pub fn op_suite(seed: u64) -> Vec<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = &mut rng;
    let a = uniform(r, (3, 4), -1.0, 1.0);
    let b = uniform(r, (3, 4), -1.0, 1.0);
    let pos = uniform(r, (3, 4), 0.5, 1.5);
    let row = uniform(r, (1, 4), -1.0, 1.0);
    let m = uniform(r, (4, 2), -1.0, 1.0);
    let mut out = Vec::new();
    let mut unary = |name: &str, x: &Tensor, u: Unary| out.push(check_inputs(name, &[x.clone()], |g, v| g.unary(v[0], u)));
    unary("square", &a, Unary::Square);
    unary("sqrt", &pos, Unary::Sqrt);
    unary("exp", &a, Unary::Exp);
    unary("log", &pos, Unary::Log);
    unary("tanh", &a, Unary::Tanh);
    unary("recip", &pos, Unary::Recip);
    unary("softplus", &a, Unary::Softplus);
    unary("gelu", &a, Unary::Gelu);
    unary("acos_sq", &(&a * 0.9), Unary::AcosSq);
    unary("clamp_min", &pos, Unary::ClampMin(0.2));
    let two = [a.clone(), b.clone()];
    out.push(check_inputs("matmul", &[a.clone(), m.clone()], |g, v| g.matmul(v[0], v[1])));
    out.push(check_inputs("add", &two, |g, v| g.add(v[0], v[1])));
    out.push(check_inputs("add_broadcast", &[a.clone(), row.clone()], |g, v| g.add(v[0], v[1])));
    out.push(check_inputs("sub", &two, |g, v| g.sub(v[0], v[1])));
    out.push(check_inputs("mul", &two, |g, v| g.mul(v[0], v[1])));
    out.push(check_inputs("mul_broadcast", &[a.clone(), uniform(r, (3, 1), -1.0, 1.0)], |g, v| g.mul(v[0], v[1])));
    out.push(check_inputs("div", &[a.clone(), pos.clone()], |g, v| g.div(v[0], v[1])));
    out.push(check_inputs("scale", &[a.clone()], |g, v| g.scale(v[0], -1.7)));
    out.push(check_inputs("offset", &[a.clone()], |g, v| g.offset(v[0], 0.3)));
    out.push(check_inputs("neg", &[a.clone()], |g, v| g.neg(v[0])));
    out.push(check_inputs("sum", &[a.clone()], |g, v| g.sum(v[0])));
    out.push(check_inputs("mean", &[a.clone()], |g, v| g.mean(v[0])));
    out.push(check_inputs("sum_rows", &[a.clone()], |g, v| g.sum_rows(v[0])));
    out.push(check_inputs("sum_cols", &[a.clone()], |g, v| g.sum_cols(v[0])));
    out.push(check_inputs("mean_cols", &[a.clone()], |g, v| g.mean_cols(v[0])));
    out.push(check_inputs("transpose", &[a.clone()], |g, v| g.transpose(v[0])));
    out.push(check_inputs("reshape", &[a.clone()], |g, v| g.reshape(v[0], (2, 6))));
    out.push(check_inputs("slice_rows", &[a.clone()], |g, v| g.slice_rows(v[0], 1, 3)));
    out.push(check_inputs("slice_cols", &[a.clone()], |g, v| g.slice_cols(v[0], 1, 3)));
    out.push(check_inputs("concat_rows", &[a.clone(), row.clone()], |g, v| g.concat_rows(&[v[0], v[1]])));
    out.push(check_inputs("concat_cols", &[a.clone(), uniform(r, (3, 2), -1.0, 1.0)], |g, v| g.concat_cols(&[v[0], v[1]])));
    out.push(check_inputs("gather_rows", &[a.clone()], |g, v| g.gather_rows(v[0], &[2, 0, 2, 1])));
    out.push(check_inputs("softmax_rows", &[a.clone()], |g, v| g.softmax_rows(v[0])));
    out.push(check_inputs("layer_norm_rows", &[a.clone()], |g, v| g.layer_norm_rows(v[0], 1e-5)));
    let m9a = uniform(r, (2, 9), -1.0, 1.0);
    let m9b = uniform(r, (2, 9), -1.0, 1.0);
    let v3 = uniform(r, (2, 3), -1.0, 1.0);
    out.push(check_inputs("batch_matmul3", &[m9a.clone(), m9b], |g, v| g.batch_matmul3(v[0], v[1])));
    out.push(check_inputs("batch_matvec3", &[m9a, v3], |g, v| g.batch_matvec3(v[0], v[1])));
    out.push(check_inputs("rot6d", &[uniform(r, (3, 6), -1.0, 1.0)], |g, v| rot6d_rows(g, v[0])));

    let template = hand3r_core::HandTemplate::build(0);
    let hand = DiffHand::new(&template);
    let mut rots0 = uniform(r, (16, 6), -0.3, 0.3);
    for i in 0..16 {
        rots0[[i, 0]] += 1.0;
        rots0[[i, 4]] += 1.0;
    }
    let beta0 = uniform(r, (1, 10), -1.0, 1.0);
    out.push(check_inputs("hand_fk", &[rots0, beta0], |g, v| {
        let rots = rot6d_rows(g, v[0]);
        let mesh = hand.forward(g, rots, v[1], true);
        g.concat_rows(&[mesh.joints, mesh.vertices])
    }));

    let mut store = ParamStore::new();
    let d = 8;
    let lin = Linear::new(&mut store, "lin", ParamGroup::Prompt, d, 5, r);
    let ln = LayerNorm::new(&mut store, "ln", ParamGroup::Prompt, d, r);
    let att = Attention::new(&mut store, "att", ParamGroup::Prompt, d, 2, r);
    let blk = Block::new(&mut store, "blk", ParamGroup::Prompt, d, 2, 2, r);
    for id in store.ids().collect::<Vec<_>>() {
        store.value_mut(id).mapv_inplace(|v| v + 0.1);
    }
    let x = uniform(r, (3, d), -1.0, 1.0);
    out.push(check_inputs("linear", &[x.clone()], |g, v| lin.forward(g, &store, v[0])));
    out.push(check_inputs("layer_norm", &[x.clone()], |g, v| ln.forward(g, &store, v[0])));
    out.push(check_inputs("attention", &[x.clone()], |g, v| att.forward(g, &store, v[0])));
    out.push(check_inputs("block", &[x.clone()], |g, v| blk.forward(g, &store, v[0])));
    let ids: Vec<ParamId> = store.ids().collect();
    let xs = x.clone();
    let (lin2, ln2, att2, blk2) = (lin.clone(), ln.clone(), att.clone(), blk.clone());
    out.push(check_params("layer_params", &mut store, &ids, 6, seed, move |g, s| {
        let x = g.constant(xs.clone());
        let y = blk2.forward(g, s, x);
        let y = att2.forward(g, s, y);
        let y = ln2.forward(g, s, y);
        let y = lin2.forward(g, s, y);
        reduce(g, y, 11)
    }));
    out
}

/// The smallest network that runs on generated frames.
pub fn check_config() -> ModelConfig {
    ModelConfig { image_res: 64, ..ModelConfig::tiny() }
}

/// Whole-network checks at [`check_config`] on a generated two-hand clip:
/// the stage-2 clip loss through the hand encoder, prompts, decoder, state
/// recurrence and every head, and the stage-1 loss through the MANO head.
pub fn model_suite(seed: u64, per_param: usize) -> crate::Result<Vec<CheckResult>> {
    let mut model = Hand3R::new(check_config())?;
    let gen = GenConfig { n_frames: 2, n_hands: 2, res: 64, template_seed: model.config.template_seed, ..GenConfig::default() };
    let seq = hand3r_synth::generate_sequence_with(&model.template, seed, &gen)?;
    let inputs: Vec<FrameInput> = seq.frames.iter().map(FrameInput::from_record).collect();
    let reference = seq.frames[0].cam_pose;
    let targets = seq.frames.iter().map(|r| FrameTarget::new(&model, r, &reference)).collect::<crate::Result<Vec<_>>>()?;
    // Move every parameter off its initial value so zero-initialised heads
    // and unit gains are exercised generically.
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for id in model.store.ids().collect::<Vec<_>>() {
        model.store.value_mut(id).mapv_inplace(|v| v + rng.gen_range(-0.05..0.05));
    }
    let w = LossWeights { gamma: 1.0, ..LossWeights::default() };
    let ids: Vec<ParamId> = model.store.ids().collect();
    let clip = |g: &mut Graph, m: &Hand3R| {
        let mut s = m.initial_state_var(g);
        let mut total = None;
        for (input, target) in inputs.iter().zip(&targets) {
            let nodes = m.frame_graph(g, input, s, None).expect("frame graph");
            let (l, _) = stage2_frame_graph(g, m, &nodes, target, input, &w);
            total = Some(match total {
                Some(t) => g.add(t, l),
                None => l,
            });
            s = nodes.state;
        }
        total.expect("clip has frames")
    };
    let mut out = vec![check_model("stage2_clip_loss", &mut model, &ids, per_param, seed, clip)];
    let hand = &targets[0].hands[0];
    let f_h = model.hand_feature_value(&inputs[0].image, &inputs[0].hands[0])?;
    let mano = model.mano_head_ids();
    out.push(check_model("stage1_loss", &mut model, &mano, 4 * per_param, seed, |g, m| {
        let f = g.constant(f_h.clone());
        let raw = m.mano_raw(g, f);
        let (rots, beta) = m.mano_decode(g, raw);
        let (j, v) = stage1_graph(g, m, rots, beta, hand);
        g.add(j, v)
    }));
    Ok(out)
}
