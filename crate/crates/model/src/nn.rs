use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Graph, Var};
use crate::params::{Init, ParamGroup, ParamId, ParamStore};

#[derive(Debug, Clone)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
}

impl Linear {
    pub fn new(store: &mut ParamStore, name: &str, group: ParamGroup, din: usize, dout: usize, rng: &mut ChaCha8Rng) -> Self {
        Self::with_init(store, name, group, (din, dout), Init::Uniform(1.0 / (din as f64).sqrt()), rng)
    }

    pub fn with_init(
        store: &mut ParamStore,
        name: &str,
        group: ParamGroup,
        (din, dout): (usize, usize),
        init: Init,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let w = store.add(&format!("{name}.w"), group, (din, dout), init, rng);
        let b = store.add(&format!("{name}.b"), group, (1, dout), Init::Zeros, rng);
        Self { w, b }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Var {
        let w = g.param(store, self.w);
        let b = g.param(store, self.b);
        let y = g.matmul(x, w);
        g.add(y, b)
    }
}

/// Row-wise layer normalization with learned gain and bias.
#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
}

pub const LN_EPS: f64 = 1e-5;

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, group: ParamGroup, dim: usize, rng: &mut ChaCha8Rng) -> Self {
        let gain = store.add(&format!("{name}.gain"), group, (1, dim), Init::Ones, rng);
        let bias = store.add(&format!("{name}.bias"), group, (1, dim), Init::Zeros, rng);
        Self { gain, bias }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Var {
        let n = g.layer_norm_rows(x, LN_EPS);
        let gain = g.param(store, self.gain);
        let bias = g.param(store, self.bias);
        let y = g.mul(n, gain);
        g.add(y, bias)
    }
}

#[derive(Debug, Clone)]
pub struct Attention {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
    pub heads: usize,
}

impl Attention {
    pub fn new(store: &mut ParamStore, name: &str, group: ParamGroup, dim: usize, heads: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            q: Linear::new(store, &format!("{name}.q"), group, dim, dim, rng),
            k: Linear::new(store, &format!("{name}.k"), group, dim, dim, rng),
            v: Linear::new(store, &format!("{name}.v"), group, dim, dim, rng),
            o: Linear::new(store, &format!("{name}.o"), group, dim, dim, rng),
            heads,
        }
    }

    /// Full (non-causal) multi-head self-attention over the rows of `x`.
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Var {
        let dim = g.shape(x).1;
        let dh = dim / self.heads;
        let q = self.q.forward(g, store, x);
        let k = self.k.forward(g, store, x);
        let v = self.v.forward(g, store, x);
        let mut outs = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let (c0, c1) = (h * dh, (h + 1) * dh);
            let qh = g.slice_cols(q, c0, c1);
            let kh = g.slice_cols(k, c0, c1);
            let vh = g.slice_cols(v, c0, c1);
            let kt = g.transpose(kh);
            let scores = g.matmul(qh, kt);
            let scores = g.scale(scores, 1.0 / (dh as f64).sqrt());
            let attn = g.softmax_rows(scores);
            outs.push(g.matmul(attn, vh));
        }
        let cat = g.concat_cols(&outs);
        self.o.forward(g, store, cat)
    }
}

/// Pre-norm transformer block.
#[derive(Debug, Clone)]
pub struct Block {
    pub ln1: LayerNorm,
    pub attn: Attention,
    pub ln2: LayerNorm,
    pub fc1: Linear,
    pub fc2: Linear,
}

impl Block {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        group: ParamGroup,
        dim: usize,
        heads: usize,
        mlp_ratio: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        Self {
            ln1: LayerNorm::new(store, &format!("{name}.ln1"), group, dim, rng),
            attn: Attention::new(store, &format!("{name}.attn"), group, dim, heads, rng),
            ln2: LayerNorm::new(store, &format!("{name}.ln2"), group, dim, rng),
            fc1: Linear::new(store, &format!("{name}.fc1"), group, dim, dim * mlp_ratio, rng),
            fc2: Linear::new(store, &format!("{name}.fc2"), group, dim * mlp_ratio, dim, rng),
        }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Var {
        let h = self.ln1.forward(g, store, x);
        let h = self.attn.forward(g, store, h);
        let x = g.add(x, h);
        let h = self.ln2.forward(g, store, x);
        let h = self.fc1.forward(g, store, h);
        let h = g.gelu(h);
        let h = self.fc2.forward(g, store, h);
        g.add(x, h)
    }
}
