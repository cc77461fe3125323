//! Tape-based reverse-mode automatic differentiation over 2-D `f64` arrays.
//!
//! A [`Graph`] records every operation as it is evaluated. Binary
//! elementwise operations broadcast a `1×m`, `n×1` or `1×1` operand against
//! the other; the backward pass sums gradients back to the operand shape.
//! Nodes that do not depend on a differentiable leaf are never visited
//! during [`Graph::backward`], so frozen parameters receive no gradient.

use std::collections::HashMap;

use ndarray::{s, Array2, ArrayView2, Axis, Zip};

use crate::params::{ParamId, ParamStore};

pub type Tensor = Array2<f64>;

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Unary {
    Square,
    Sqrt,
    Exp,
    Log,
    Tanh,
    Recip,
    /// `ln(1 + eˣ)`.
    Softplus,
    /// Tanh approximation of the Gaussian error linear unit.
    Gelu,
    /// `acos(x)²` with `x` clamped to `[-1, 1]`; the derivative tends to −2 at 1.
    AcosSq,
    ClampMin(f64),
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Scale(Var, f64),
    Offset(Var),
    Unary(Var, Unary),
    SumAll(Var),
    SumRows(Var),
    SumCols(Var),
    Transpose(Var),
    Reshape(Var),
    SliceRows(Var, usize, usize),
    SliceCols(Var, usize, usize),
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    GatherRows(Var, Vec<usize>),
    SoftmaxRows(Var),
    /// Stores `1/σ` per row.
    LayerNormRows(Var, Tensor),
    BatchMatMul3(Var, Var),
    BatchMatVec3(Var, Var),
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: HashMap<ParamId, Var>,
}

/// Gradients of one backward pass, indexed by node.
pub struct Grads {
    grads: Vec<Option<Tensor>>,
    params: Vec<(ParamId, Var)>,
}

impl Grads {
    pub fn of(&self, v: Var) -> Option<&Tensor> {
        self.grads[v.0].as_ref()
    }

    /// Gradient of every parameter that took part in the pass and received one.
    pub fn params(&self) -> impl Iterator<Item = (ParamId, &Tensor)> {
        self.params.iter().filter_map(|(id, v)| self.grads[v.0].as_ref().map(|g| (*id, g)))
    }

    pub fn param(&self, id: ParamId) -> Option<&Tensor> {
        self.params.iter().find(|(p, _)| *p == id).and_then(|(_, v)| self.of(*v))
    }
}

fn gelu(x: f64) -> (f64, f64) {
    const C: f64 = 0.797_884_560_802_865_4; // sqrt(2/π)
    let u = C * (x + 0.044715 * x * x * x);
    let t = u.tanh();
    let du = C * (1.0 + 3.0 * 0.044715 * x * x);
    (0.5 * x * (1.0 + t), 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du)
}

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn acos_sq_grad(x: f64) -> f64 {
    let x = x.clamp(-1.0, 1.0);
    let s = (1.0 - x * x).sqrt();
    if s < 1e-9 {
        if x > 0.0 {
            -2.0
        } else {
            -2.0 * std::f64::consts::PI / 1e-9
        }
    } else {
        -2.0 * x.acos() / s
    }
}

fn unary_forward(u: Unary, x: f64) -> f64 {
    match u {
        Unary::Square => x * x,
        Unary::Sqrt => x.sqrt(),
        Unary::Exp => x.exp(),
        Unary::Log => x.ln(),
        Unary::Tanh => x.tanh(),
        Unary::Recip => 1.0 / x,
        Unary::Softplus => softplus(x),
        Unary::Gelu => gelu(x).0,
        Unary::AcosSq => x.clamp(-1.0, 1.0).acos().powi(2),
        Unary::ClampMin(c) => x.max(c),
    }
}

fn unary_grad(u: Unary, x: f64, y: f64) -> f64 {
    match u {
        Unary::Square => 2.0 * x,
        Unary::Sqrt => 0.5 / y,
        Unary::Exp => y,
        Unary::Log => 1.0 / x,
        Unary::Tanh => 1.0 - y * y,
        Unary::Recip => -y * y,
        Unary::Softplus => sigmoid(x),
        Unary::Gelu => gelu(x).1,
        Unary::AcosSq => acos_sq_grad(x),
        Unary::ClampMin(c) => {
            if x > c {
                1.0
            } else {
                0.0
            }
        }
    }
}

/// Sums `g` down to `shape` over broadcast axes.
fn reduce_to(g: Tensor, shape: (usize, usize)) -> Tensor {
    let mut g = g;
    if shape.0 == 1 && g.nrows() != 1 {
        g = g.sum_axis(Axis(0)).insert_axis(Axis(0));
    }
    if shape.1 == 1 && g.ncols() != 1 {
        g = g.sum_axis(Axis(1)).insert_axis(Axis(1));
    }
    g
}

fn broadcast_shape(a: (usize, usize), b: (usize, usize)) -> (usize, usize) {
    let dim = |x: usize, y: usize| {
        if x == y || y == 1 {
            x
        } else if x == 1 {
            y
        } else {
            panic!("incompatible shapes {a:?} and {b:?}")
        }
    };
    (dim(a.0, b.0), dim(a.1, b.1))
}

fn binary<F: Fn(f64, f64) -> f64>(a: &Tensor, b: &Tensor, f: F) -> Tensor {
    let shape = broadcast_shape(a.dim(), b.dim());
    let av = a.broadcast(shape).unwrap();
    let bv = b.broadcast(shape).unwrap();
    Zip::from(&av).and(&bv).map_collect(|x, y| f(*x, *y))
}

fn mat3(row: ArrayView2<f64>, i: usize) -> nalgebra::Matrix3<f64> {
    nalgebra::Matrix3::from_fn(|r, c| row[[i, 3 * r + c]])
}

fn put_mat3(out: &mut Tensor, i: usize, m: &nalgebra::Matrix3<f64>) {
    for r in 0..3 {
        for c in 0..3 {
            out[[i, 3 * r + c]] = m[(r, c)];
        }
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].needs_grad)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.dim()
    }

    pub fn scalar(&self, v: Var) -> f64 {
        let t = self.value(v);
        assert_eq!(t.dim(), (1, 1), "not a scalar");
        t[[0, 0]]
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Leaf without gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// Differentiable leaf.
    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Parameter leaf, shared across uses within this graph. Frozen
    /// parameters enter as constants.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(v) = self.params.get(&id) {
            return *v;
        }
        let v = self.push(store.value(id).clone(), Op::Leaf, store.is_trainable(id));
        self.params.insert(id, v);
        v
    }

    pub fn param_var(&self, id: ParamId) -> Option<Var> {
        self.params.get(&id).copied()
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).dot(self.value(b));
        let n = self.needs(&[a, b]);
        self.push(v, Op::MatMul(a, b), n)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = binary(self.value(a), self.value(b), |x, y| x + y);
        let n = self.needs(&[a, b]);
        self.push(v, Op::Add(a, b), n)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = binary(self.value(a), self.value(b), |x, y| x - y);
        let n = self.needs(&[a, b]);
        self.push(v, Op::Sub(a, b), n)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let v = binary(self.value(a), self.value(b), |x, y| x * y);
        let n = self.needs(&[a, b]);
        self.push(v, Op::Mul(a, b), n)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Var {
        let v = binary(self.value(a), self.value(b), |x, y| x / y);
        let n = self.needs(&[a, b]);
        self.push(v, Op::Div(a, b), n)
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let v = self.value(a) * k;
        let n = self.needs(&[a]);
        self.push(v, Op::Scale(a, k), n)
    }

    pub fn offset(&mut self, a: Var, k: f64) -> Var {
        let v = self.value(a) + k;
        let n = self.needs(&[a]);
        self.push(v, Op::Offset(a), n)
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.scale(a, -1.0)
    }

    pub fn unary(&mut self, a: Var, u: Unary) -> Var {
        let v = self.value(a).mapv(|x| unary_forward(u, x));
        let n = self.needs(&[a]);
        self.push(v, Op::Unary(a, u), n)
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Square)
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Sqrt)
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Gelu)
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Softplus)
    }

    pub fn log(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Log)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let v = Array2::from_elem((1, 1), self.value(a).sum());
        let n = self.needs(&[a]);
        self.push(v, Op::SumAll(a), n)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let count = self.value(a).len() as f64;
        let s = self.sum(a);
        self.scale(s, 1.0 / count)
    }

    /// Row sums as an `n×1` column.
    pub fn sum_rows(&mut self, a: Var) -> Var {
        let v = self.value(a).sum_axis(Axis(1)).insert_axis(Axis(1));
        let n = self.needs(&[a]);
        self.push(v, Op::SumRows(a), n)
    }

    /// Column sums as a `1×m` row.
    pub fn sum_cols(&mut self, a: Var) -> Var {
        let v = self.value(a).sum_axis(Axis(0)).insert_axis(Axis(0));
        let n = self.needs(&[a]);
        self.push(v, Op::SumCols(a), n)
    }

    pub fn mean_cols(&mut self, a: Var) -> Var {
        let rows = self.shape(a).0 as f64;
        let s = self.sum_cols(a);
        self.scale(s, 1.0 / rows)
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let v = self.value(a).t().to_owned();
        let n = self.needs(&[a]);
        self.push(v, Op::Transpose(a), n)
    }

    /// Row-major reshape.
    pub fn reshape(&mut self, a: Var, shape: (usize, usize)) -> Var {
        let src = self.value(a);
        assert_eq!(src.len(), shape.0 * shape.1, "reshape size");
        let flat: Vec<f64> = src.iter().copied().collect();
        let v = Array2::from_shape_vec(shape, flat).unwrap();
        let n = self.needs(&[a]);
        self.push(v, Op::Reshape(a), n)
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> Var {
        let v = self.value(a).slice(s![start..end, ..]).to_owned();
        let n = self.needs(&[a]);
        self.push(v, Op::SliceRows(a, start, end), n)
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Var {
        let v = self.value(a).slice(s![.., start..end]).to_owned();
        let n = self.needs(&[a]);
        self.push(v, Op::SliceCols(a, start, end), n)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|p| self.value(*p).view()).collect();
        let v = ndarray::concatenate(Axis(0), &views).expect("concat_rows shapes");
        let n = self.needs(parts);
        self.push(v, Op::ConcatRows(parts.to_vec()), n)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|p| self.value(*p).view()).collect();
        let v = ndarray::concatenate(Axis(1), &views).expect("concat_cols shapes");
        let n = self.needs(parts);
        self.push(v, Op::ConcatCols(parts.to_vec()), n)
    }

    pub fn gather_rows(&mut self, a: Var, idx: &[usize]) -> Var {
        let v = self.value(a).select(Axis(0), idx);
        let n = self.needs(&[a]);
        self.push(v, Op::GatherRows(a, idx.to_vec()), n)
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let mut v = self.value(a).clone();
        for mut row in v.rows_mut() {
            let m = row.fold(f64::NEG_INFINITY, |a, b| a.max(*b));
            row.mapv_inplace(|x| (x - m).exp());
            let s = row.sum();
            row /= s;
        }
        let n = self.needs(&[a]);
        self.push(v, Op::SoftmaxRows(a), n)
    }

    /// Per-row standardization without affine parameters.
    pub fn layer_norm_rows(&mut self, a: Var, eps: f64) -> Var {
        let x = self.value(a);
        let (rows, cols) = x.dim();
        let mut y = Array2::zeros((rows, cols));
        let mut inv = Array2::zeros((rows, 1));
        for r in 0..rows {
            let row = x.row(r);
            let mu = row.sum() / cols as f64;
            let var = row.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / cols as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv[[r, 0]] = is;
            for c in 0..cols {
                y[[r, c]] = (row[c] - mu) * is;
            }
        }
        let n = self.needs(&[a]);
        self.push(y, Op::LayerNormRows(a, inv), n)
    }

    /// Row-wise product of 3×3 matrices stored row-major in `n×9` arrays.
    pub fn batch_matmul3(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!(av.dim(), bv.dim(), "batch_matmul3 shapes");
        assert_eq!(av.ncols(), 9);
        let mut out = Array2::zeros(av.dim());
        for i in 0..av.nrows() {
            put_mat3(&mut out, i, &(mat3(av.view(), i) * mat3(bv.view(), i)));
        }
        let n = self.needs(&[a, b]);
        self.push(out, Op::BatchMatMul3(a, b), n)
    }

    /// Row-wise product of `n×9` matrices with `n×3` vectors.
    pub fn batch_matvec3(&mut self, a: Var, x: Var) -> Var {
        let (av, xv) = (self.value(a), self.value(x));
        assert_eq!((av.nrows(), av.ncols(), xv.ncols()), (xv.nrows(), 9, 3), "batch_matvec3 shapes");
        let mut out = Array2::zeros((av.nrows(), 3));
        for i in 0..av.nrows() {
            for r in 0..3 {
                out[[i, r]] = (0..3).map(|c| av[[i, 3 * r + c]] * xv[[i, c]]).sum();
            }
        }
        let n = self.needs(&[a, x]);
        self.push(out, Op::BatchMatVec3(a, x), n)
    }

    /// True if `out` is computed (transitively) from `v`.
    pub fn depends_on(&self, out: Var, v: Var) -> bool {
        let mut stack = vec![out];
        let mut seen = vec![false; self.nodes.len()];
        while let Some(n) = stack.pop() {
            if n == v {
                return true;
            }
            if n.0 < v.0 || seen[n.0] {
                continue;
            }
            seen[n.0] = true;
            stack.extend(self.inputs(n));
        }
        false
    }

    fn inputs(&self, v: Var) -> Vec<Var> {
        match &self.nodes[v.0].op {
            Op::Leaf => vec![],
            Op::MatMul(a, b)
            | Op::Add(a, b)
            | Op::Sub(a, b)
            | Op::Mul(a, b)
            | Op::Div(a, b)
            | Op::BatchMatMul3(a, b)
            | Op::BatchMatVec3(a, b) => vec![*a, *b],
            Op::Scale(a, _)
            | Op::Offset(a)
            | Op::Unary(a, _)
            | Op::SumAll(a)
            | Op::SumRows(a)
            | Op::SumCols(a)
            | Op::Transpose(a)
            | Op::Reshape(a)
            | Op::SliceRows(a, _, _)
            | Op::SliceCols(a, _, _)
            | Op::GatherRows(a, _)
            | Op::SoftmaxRows(a)
            | Op::LayerNormRows(a, _) => vec![*a],
            Op::ConcatRows(v) | Op::ConcatCols(v) => v.clone(),
        }
    }

    /// Backpropagates from a scalar output.
    pub fn backward(&self, out: Var) -> Grads {
        assert_eq!(self.shape(out), (1, 1), "backward needs a scalar output");
        self.backward_with(out, Array2::ones((1, 1)))
    }

    /// Backpropagates an explicit output cotangent.
    pub fn backward_with(&self, out: Var, seed: Tensor) -> Grads {
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        let params: Vec<(ParamId, Var)> = {
            let mut p: Vec<_> = self.params.iter().map(|(k, v)| (*k, *v)).collect();
            p.sort();
            p
        };
        if !self.nodes[out.0].needs_grad {
            return Grads { grads, params };
        }
        grads[out.0] = Some(seed);
        for i in (0..=out.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            let mut acc = |v: Var, d: Tensor| {
                if !self.nodes[v.0].needs_grad {
                    return;
                }
                match &mut grads[v.0] {
                    Some(e) => *e += &d,
                    slot => *slot = Some(d),
                }
            };
            let val = |v: Var| &self.nodes[v.0].value;
            match &node.op {
                Op::Leaf => unreachable!(),
                Op::MatMul(a, b) => {
                    acc(*a, g.dot(&val(*b).t()));
                    acc(*b, val(*a).t().dot(&g));
                }
                Op::Add(a, b) => {
                    acc(*a, reduce_to(g.clone(), val(*a).dim()));
                    acc(*b, reduce_to(g, val(*b).dim()));
                }
                Op::Sub(a, b) => {
                    acc(*a, reduce_to(g.clone(), val(*a).dim()));
                    acc(*b, reduce_to(-g, val(*b).dim()));
                }
                Op::Mul(a, b) => {
                    acc(*a, reduce_to(binary(&g, val(*b), |x, y| x * y), val(*a).dim()));
                    acc(*b, reduce_to(binary(&g, val(*a), |x, y| x * y), val(*b).dim()));
                }
                Op::Div(a, b) => {
                    let (av, bv) = (val(*a), val(*b));
                    acc(*a, reduce_to(binary(&g, bv, |x, y| x / y), av.dim()));
                    let ga = binary(&g, av, |x, y| x * y);
                    acc(*b, reduce_to(binary(&ga, bv, |x, y| -x / (y * y)), bv.dim()));
                }
                Op::Scale(a, k) => acc(*a, g * *k),
                Op::Offset(a) => acc(*a, g),
                Op::Unary(a, u) => {
                    let mut d = g;
                    Zip::from(&mut d).and(val(*a)).and(&node.value).for_each(|d, x, y| *d *= unary_grad(*u, *x, *y));
                    acc(*a, d);
                }
                Op::SumAll(a) => acc(*a, Array2::from_elem(val(*a).dim(), g[[0, 0]])),
                Op::SumRows(a) => acc(*a, g.broadcast(val(*a).dim()).unwrap().to_owned()),
                Op::SumCols(a) => acc(*a, g.broadcast(val(*a).dim()).unwrap().to_owned()),
                Op::Transpose(a) => acc(*a, g.t().to_owned()),
                Op::Reshape(a) => {
                    let flat: Vec<f64> = g.iter().copied().collect();
                    acc(*a, Array2::from_shape_vec(val(*a).dim(), flat).unwrap());
                }
                Op::SliceRows(a, s0, s1) => {
                    let mut d = Array2::zeros(val(*a).dim());
                    d.slice_mut(s![*s0..*s1, ..]).assign(&g);
                    acc(*a, d);
                }
                Op::SliceCols(a, s0, s1) => {
                    let mut d = Array2::zeros(val(*a).dim());
                    d.slice_mut(s![.., *s0..*s1]).assign(&g);
                    acc(*a, d);
                }
                Op::ConcatRows(parts) => {
                    let mut r = 0;
                    for p in parts {
                        let h = val(*p).nrows();
                        acc(*p, g.slice(s![r..r + h, ..]).to_owned());
                        r += h;
                    }
                }
                Op::ConcatCols(parts) => {
                    let mut c = 0;
                    for p in parts {
                        let w = val(*p).ncols();
                        acc(*p, g.slice(s![.., c..c + w]).to_owned());
                        c += w;
                    }
                }
                Op::GatherRows(a, idx) => {
                    let mut d = Array2::zeros(val(*a).dim());
                    for (k, &r) in idx.iter().enumerate() {
                        let mut row = d.row_mut(r);
                        row += &g.row(k);
                    }
                    acc(*a, d);
                }
                Op::SoftmaxRows(a) => {
                    let y = &node.value;
                    let mut d = Array2::zeros(y.dim());
                    for r in 0..y.nrows() {
                        let dot: f64 = (0..y.ncols()).map(|c| g[[r, c]] * y[[r, c]]).sum();
                        for c in 0..y.ncols() {
                            d[[r, c]] = y[[r, c]] * (g[[r, c]] - dot);
                        }
                    }
                    acc(*a, d);
                }
                Op::LayerNormRows(a, inv) => {
                    let y = &node.value;
                    let cols = y.ncols() as f64;
                    let mut d = Array2::zeros(y.dim());
                    for r in 0..y.nrows() {
                        let mg: f64 = g.row(r).sum() / cols;
                        let mgy: f64 = (0..y.ncols()).map(|c| g[[r, c]] * y[[r, c]]).sum::<f64>() / cols;
                        for c in 0..y.ncols() {
                            d[[r, c]] = inv[[r, 0]] * (g[[r, c]] - mg - y[[r, c]] * mgy);
                        }
                    }
                    acc(*a, d);
                }
                Op::BatchMatMul3(a, b) => {
                    let (av, bv) = (val(*a), val(*b));
                    let mut da = Array2::zeros(av.dim());
                    let mut db = Array2::zeros(bv.dim());
                    for r in 0..av.nrows() {
                        let gm = mat3(g.view(), r);
                        put_mat3(&mut da, r, &(gm * mat3(bv.view(), r).transpose()));
                        put_mat3(&mut db, r, &(mat3(av.view(), r).transpose() * gm));
                    }
                    acc(*a, da);
                    acc(*b, db);
                }
                Op::BatchMatVec3(a, x) => {
                    let (av, xv) = (val(*a), val(*x));
                    let mut da = Array2::zeros(av.dim());
                    let mut dx = Array2::zeros(xv.dim());
                    for r in 0..av.nrows() {
                        for i in 0..3 {
                            for j in 0..3 {
                                da[[r, 3 * i + j]] = g[[r, i]] * xv[[r, j]];
                                dx[[r, j]] += av[[r, 3 * i + j]] * g[[r, i]];
                            }
                        }
                    }
                    acc(*a, da);
                    acc(*x, dx);
                }
            }
        }
        Grads { grads, params }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn broadcast_add_reduces_gradient() {
        let mut g = Graph::new();
        let a = g.input(array![[1.0, 2.0], [3.0, 4.0]]);
        let b = g.input(array![[10.0, 20.0]]);
        let c = g.add(a, b);
        let s = g.sum(c);
        assert_eq!(g.scalar(s), 70.0);
        let gr = g.backward(s);
        assert_eq!(gr.of(b).unwrap(), &array![[2.0, 2.0]]);
        assert_eq!(gr.of(a).unwrap(), &Array2::<f64>::ones((2, 2)));
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut g = Graph::new();
        let a = g.constant(array![[1.0]]);
        let b = g.input(array![[2.0]]);
        let c = g.mul(a, b);
        let gr = g.backward(c);
        assert!(gr.of(a).is_none());
        assert_eq!(gr.of(b).unwrap()[[0, 0]], 1.0);
        assert!(g.depends_on(c, a));
        assert!(!g.depends_on(a, b));
    }

    #[test]
    fn acos_sq_is_finite_at_identity() {
        let mut g = Graph::new();
        let a = g.input(array![[1.0]]);
        let c = g.unary(a, Unary::AcosSq);
        assert_eq!(g.scalar(c), 0.0);
        assert_eq!(g.backward(c).of(a).unwrap()[[0, 0]], -2.0);
    }

    #[test]
    fn batch_matmul3_matches_nalgebra() {
        let mut g = Graph::new();
        let a = g.input(Array2::from_shape_fn((2, 9), |(i, j)| (i * 9 + j) as f64 * 0.1));
        let b = g.input(Array2::from_shape_fn((2, 9), |(i, j)| ((i + j) % 4) as f64 - 1.0));
        let c = g.batch_matmul3(a, b);
        let want = mat3(g.value(a).view(), 1) * mat3(g.value(b).view(), 1);
        assert_eq!(mat3(g.value(c).view(), 1), want);
    }
}
