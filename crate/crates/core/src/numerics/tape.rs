//! Reverse-mode automatic differentiation over a flat operation tape.
//!
//! A [`Tape`] records every operation of one forward pass as a node holding
//! its output value. [`Tape::backward`] walks the nodes in reverse order and
//! propagates gradients to every node that requires them; parameter leaves
//! remember their [`ParamId`] so their gradients can be accumulated into a
//! [`ParamStore`].

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;

use super::kernels::{self, ConvGeom};
use super::tensor::numel;
use super::{ParamId, ParamStore, Scalar, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(pub(crate) usize);

#[derive(Debug)]
pub(crate) enum Op<T> {
    Leaf,
    Param,
    Add(Var, Var),
    Scale(Var, T),
    AddBroadcast(Var, Var),
    Linear { x: Var, w: Var, b: Option<Var> },
    MatMul { a: Var, b: Var, trans_b: bool },
    Conv2d { x: Var, w: Var, b: Option<Var>, geom: ConvGeom, batch: usize, c_out: usize },
    MaxPool2d { x: Var, argmax: Vec<usize> },
    Relu(Var),
    Gelu(Var),
    LayerNorm { x: Var, gamma: Var, beta: Var, mean: Vec<T>, rstd: Vec<T> },
    Softmax(Var),
    LogSoftmax(Var),
    Reshape(Var),
    Permute { x: Var, axes: Vec<usize> },
    PrependToken { seq: Var, token: Var },
    SelectToken { seq: Var, index: usize },
    Concat { a: Var, b: Var },
    Sum(Var),
    Mean(Var),
    Mse(Var, Var),
    CrossEntropy { logits: Var, labels: Vec<usize> },
    KlDiv { log_p: Var, log_q: Var },
}

#[derive(Debug)]
pub(crate) struct Node<T> {
    pub value: Tensor<T>,
    pub op: Op<T>,
    pub requires_grad: bool,
}

/// Record of one forward pass.
#[derive(Debug)]
pub struct Tape<T: Scalar = f32> {
    pub(crate) nodes: Vec<Node<T>>,
    grad_enabled: bool,
    param_vars: BTreeMap<(usize, ParamId), Var>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new(), grad_enabled: true, param_vars: BTreeMap::new() }
    }

    /// A tape that records values only; parameters enter as constants and
    /// nothing on it can receive a gradient.
    pub fn no_grad() -> Self {
        Self { grad_enabled: false, ..Self::new() }
    }

    pub fn grad_enabled(&self) -> bool {
        self.grad_enabled
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub(crate) fn push(&mut self, value: Tensor<T>, op: Op<T>, name: &'static str) -> Result<Var> {
        #[cfg(debug_assertions)]
        if !value.is_finite() {
            return Err(Error::NonFinite { op: name });
        }
        let _ = name;
        let requires_grad = self.grad_enabled
            && match &op {
                Op::Leaf => false,
                Op::Param => true,
                _ => op_inputs(&op).iter().any(|v| self.nodes[v.0].requires_grad),
            };
        self.nodes.push(Node { value, op, requires_grad });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Inserts a value that never receives a gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.nodes.push(Node { value, op: Op::Leaf, requires_grad: false });
        Var(self.nodes.len() - 1)
    }

    /// Inserts a free leaf whose gradient is reported by [`Tape::backward`].
    pub fn variable(&mut self, value: Tensor<T>) -> Var {
        let requires_grad = self.grad_enabled;
        self.nodes.push(Node { value, op: Op::Leaf, requires_grad });
        Var(self.nodes.len() - 1)
    }

    /// Binds a parameter to this tape. Repeated calls return the same node.
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        if let Some(&v) = self.param_vars.get(&(store.uid(), id)) {
            return v;
        }
        let value = store.value(id).clone();
        let v = if self.grad_enabled {
            self.nodes.push(Node { value, op: Op::Param, requires_grad: true });
            Var(self.nodes.len() - 1)
        } else {
            self.constant(value)
        };
        self.param_vars.insert((store.uid(), id), v);
        v
    }

    /// Computes d`loss`/d(node) for every node that requires a gradient.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let loss_value = self.value(loss);
        if loss_value.len() != 1 || loss_value.rank() > 1 {
            return Err(Error::NonScalarLoss(loss_value.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor<T>>> = Vec::new();
        grads.resize_with(loss.0 + 1, || None);
        if self.nodes[loss.0].requires_grad {
            grads[loss.0] = Some(Tensor::ones(loss_value.shape().to_vec()));
        }
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(node, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(Gradients { grads, params: self.param_vars.clone() })
    }

    /// Runs [`Tape::backward`] and adds the parameter gradients into `store`.
    pub fn backward_into(&self, loss: Var, store: &mut ParamStore<T>) -> Result<()> {
        self.backward(loss)?.accumulate_into(store);
        Ok(())
    }

    fn propagate(&self, node: &Node<T>, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        let val = |v: Var| &self.nodes[v.0].value;
        let mut send = |v: Var, t: Tensor<T>| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(acc) => acc.add_assign(&t),
                slot @ None => *slot = Some(t),
            }
        };
        let wants = |v: Var| self.nodes[v.0].requires_grad;
        let gd = g.data();

        match &node.op {
            Op::Leaf | Op::Param => {}
            Op::Add(a, b) => {
                send(*a, g.clone());
                send(*b, g.clone());
            }
            Op::Scale(x, c) => send(*x, g.map(|v| v * *c)),
            Op::AddBroadcast(x, y) => {
                send(*x, g.clone());
                if wants(*y) {
                    let n = val(*y).len();
                    let mut dy = vec![T::zero(); n];
                    for chunk in gd.chunks(n) {
                        for (d, &v) in dy.iter_mut().zip(chunk) {
                            *d += v;
                        }
                    }
                    send(*y, Tensor::from_parts(val(*y).shape().to_vec(), dy));
                }
            }
            Op::Linear { x, w, b } => {
                let (xv, wv) = (val(*x), val(*w));
                let din = wv.shape()[0];
                let dout = wv.shape()[1];
                let rows = xv.len() / din;
                if wants(*x) {
                    let mut dx = vec![T::zero(); xv.len()];
                    kernels::gemm_nt(rows, dout, din, gd, wv.data(), &mut dx);
                    send(*x, Tensor::from_parts(xv.shape().to_vec(), dx));
                }
                if wants(*w) {
                    let mut dw = vec![T::zero(); din * dout];
                    kernels::gemm_tn(din, rows, dout, xv.data(), gd, &mut dw);
                    send(*w, Tensor::from_parts(wv.shape().to_vec(), dw));
                }
                if let Some(b) = b {
                    if wants(*b) {
                        send(*b, Tensor::from_parts(vec![dout], column_sums(gd, dout)));
                    }
                }
            }
            Op::MatMul { a, b, trans_b } => {
                let (av, bv) = (val(*a), val(*b));
                let r = av.rank();
                let (m, k) = (av.shape()[r - 2], av.shape()[r - 1]);
                let n = if *trans_b { bv.shape()[r - 2] } else { bv.shape()[r - 1] };
                let batches = av.len() / (m * k);
                if wants(*a) {
                    let mut da = vec![T::zero(); av.len()];
                    for i in 0..batches {
                        let dc = &gd[i * m * n..(i + 1) * m * n];
                        let bb = &bv.data()[i * k * n..(i + 1) * k * n];
                        let out = &mut da[i * m * k..(i + 1) * m * k];
                        if *trans_b {
                            kernels::gemm_nn(m, n, k, dc, bb, out);
                        } else {
                            kernels::gemm_nt(m, n, k, dc, bb, out);
                        }
                    }
                    send(*a, Tensor::from_parts(av.shape().to_vec(), da));
                }
                if wants(*b) {
                    let mut db = vec![T::zero(); bv.len()];
                    for i in 0..batches {
                        let dc = &gd[i * m * n..(i + 1) * m * n];
                        let ab = &av.data()[i * m * k..(i + 1) * m * k];
                        let out = &mut db[i * k * n..(i + 1) * k * n];
                        if *trans_b {
                            kernels::gemm_tn(n, m, k, dc, ab, out);
                        } else {
                            kernels::gemm_tn(k, m, n, ab, dc, out);
                        }
                    }
                    send(*b, Tensor::from_parts(bv.shape().to_vec(), db));
                }
            }
            Op::Conv2d { x, w, b, geom, batch, c_out } => {
                let (xv, wv) = (val(*x), val(*w));
                let (p, q) = (geom.patch_len(), geom.positions());
                let img = geom.c_in * geom.h * geom.w;
                let mut cols = vec![T::zero(); p * q];
                let mut dcols = vec![T::zero(); p * q];
                let mut dx = if wants(*x) { vec![T::zero(); xv.len()] } else { Vec::new() };
                let mut dw = if wants(*w) { vec![T::zero(); wv.len()] } else { Vec::new() };
                for bi in 0..*batch {
                    let dy = &gd[bi * c_out * q..(bi + 1) * c_out * q];
                    if !dw.is_empty() {
                        kernels::im2col(geom, &xv.data()[bi * img..(bi + 1) * img], &mut cols);
                        kernels::gemm_nt(*c_out, q, p, dy, &cols, &mut dw);
                    }
                    if !dx.is_empty() {
                        dcols.iter_mut().for_each(|v| *v = T::zero());
                        kernels::gemm_tn(p, *c_out, q, wv.data(), dy, &mut dcols);
                        kernels::col2im(geom, &dcols, &mut dx[bi * img..(bi + 1) * img]);
                    }
                }
                if !dx.is_empty() {
                    send(*x, Tensor::from_parts(xv.shape().to_vec(), dx));
                }
                if !dw.is_empty() {
                    send(*w, Tensor::from_parts(wv.shape().to_vec(), dw));
                }
                if let Some(b) = b {
                    if wants(*b) {
                        let mut db = vec![T::zero(); *c_out];
                        for (i, chunk) in gd.chunks(q).enumerate() {
                            db[i % c_out] += chunk.iter().copied().sum::<T>();
                        }
                        send(*b, Tensor::from_parts(vec![*c_out], db));
                    }
                }
            }
            Op::MaxPool2d { x, argmax } => {
                let xv = val(*x);
                let mut dx = vec![T::zero(); xv.len()];
                for (&src, &d) in argmax.iter().zip(gd) {
                    dx[src] += d;
                }
                send(*x, Tensor::from_parts(xv.shape().to_vec(), dx));
            }
            Op::Relu(x) => {
                let xv = val(*x);
                let dx = xv
                    .data()
                    .iter()
                    .zip(gd)
                    .map(|(&xi, &d)| if xi > T::zero() { d } else { T::zero() })
                    .collect();
                send(*x, Tensor::from_parts(xv.shape().to_vec(), dx));
            }
            Op::Gelu(x) => {
                let xv = val(*x);
                let dx = xv.data().iter().zip(gd).map(|(&xi, &d)| d * gelu_grad(xi)).collect();
                send(*x, Tensor::from_parts(xv.shape().to_vec(), dx));
            }
            Op::LayerNorm { x, gamma, beta, mean, rstd } => {
                let xv = val(*x);
                let gv = val(*gamma);
                let e = gv.len();
                let rows = xv.len() / e;
                let inv_e = T::one() / T::from_usize(e);
                let mut dx = vec![T::zero(); xv.len()];
                let mut dgamma = vec![T::zero(); e];
                let mut dbeta = vec![T::zero(); e];
                let mut xhat = vec![T::zero(); e];
                let mut gh = vec![T::zero(); e];
                for r in 0..rows {
                    let xr = &xv.data()[r * e..(r + 1) * e];
                    let dyr = &gd[r * e..(r + 1) * e];
                    let (mut s1, mut s2) = (T::zero(), T::zero());
                    for j in 0..e {
                        xhat[j] = (xr[j] - mean[r]) * rstd[r];
                        gh[j] = dyr[j] * gv.data()[j];
                        s1 += gh[j];
                        s2 += gh[j] * xhat[j];
                        dgamma[j] += dyr[j] * xhat[j];
                        dbeta[j] += dyr[j];
                    }
                    let (m1, m2) = (s1 * inv_e, s2 * inv_e);
                    for j in 0..e {
                        dx[r * e + j] = rstd[r] * (gh[j] - m1 - xhat[j] * m2);
                    }
                }
                send(*x, Tensor::from_parts(xv.shape().to_vec(), dx));
                send(*gamma, Tensor::from_parts(vec![e], dgamma));
                send(*beta, Tensor::from_parts(vec![e], dbeta));
            }
            Op::Softmax(x) => {
                let y = node.value.data();
                let n = *node.value.shape().last().unwrap_or(&1);
                let mut dx = vec![T::zero(); y.len()];
                for ((yr, dyr), dxr) in y.chunks(n).zip(gd.chunks(n)).zip(dx.chunks_mut(n)) {
                    let s: T = yr.iter().zip(dyr).map(|(&a, &b)| a * b).sum();
                    for j in 0..n {
                        dxr[j] = yr[j] * (dyr[j] - s);
                    }
                }
                send(*x, Tensor::from_parts(node.value.shape().to_vec(), dx));
            }
            Op::LogSoftmax(x) => {
                let y = node.value.data();
                let n = *node.value.shape().last().unwrap_or(&1);
                let mut dx = vec![T::zero(); y.len()];
                for ((yr, dyr), dxr) in y.chunks(n).zip(gd.chunks(n)).zip(dx.chunks_mut(n)) {
                    let s: T = dyr.iter().copied().sum();
                    for j in 0..n {
                        dxr[j] = dyr[j] - yr[j].exp() * s;
                    }
                }
                send(*x, Tensor::from_parts(node.value.shape().to_vec(), dx));
            }
            Op::Reshape(x) => {
                send(*x, Tensor::from_parts(val(*x).shape().to_vec(), gd.to_vec()));
            }
            Op::Permute { x, axes } => {
                let mut inverse = vec![0; axes.len()];
                for (i, &a) in axes.iter().enumerate() {
                    inverse[a] = i;
                }
                send(*x, permute_tensor(g, &inverse));
            }
            Op::PrependToken { seq, token } => {
                let sv = val(*seq);
                let (b, n, e) = (sv.shape()[0], sv.shape()[1], sv.shape()[2]);
                if wants(*seq) {
                    let mut ds = Vec::with_capacity(sv.len());
                    for bi in 0..b {
                        let base = bi * (n + 1) * e;
                        ds.extend_from_slice(&gd[base + e..base + (n + 1) * e]);
                    }
                    send(*seq, Tensor::from_parts(sv.shape().to_vec(), ds));
                }
                if wants(*token) {
                    let mut dt = vec![T::zero(); e];
                    for bi in 0..b {
                        let base = bi * (n + 1) * e;
                        for j in 0..e {
                            dt[j] += gd[base + j];
                        }
                    }
                    send(*token, Tensor::from_parts(val(*token).shape().to_vec(), dt));
                }
            }
            Op::SelectToken { seq, index } => {
                let sv = val(*seq);
                let (b, l, e) = (sv.shape()[0], sv.shape()[1], sv.shape()[2]);
                let mut ds = vec![T::zero(); sv.len()];
                for bi in 0..b {
                    let dst = (bi * l + index) * e;
                    ds[dst..dst + e].copy_from_slice(&gd[bi * e..(bi + 1) * e]);
                }
                send(*seq, Tensor::from_parts(sv.shape().to_vec(), ds));
            }
            Op::Concat { a, b } => {
                let (av, bv) = (val(*a), val(*b));
                let ea = *av.shape().last().unwrap();
                let eb = *bv.shape().last().unwrap();
                let rows = av.len() / ea;
                let mut da = Vec::with_capacity(av.len());
                let mut db = Vec::with_capacity(bv.len());
                for r in 0..rows {
                    let row = &gd[r * (ea + eb)..(r + 1) * (ea + eb)];
                    da.extend_from_slice(&row[..ea]);
                    db.extend_from_slice(&row[ea..]);
                }
                send(*a, Tensor::from_parts(av.shape().to_vec(), da));
                send(*b, Tensor::from_parts(bv.shape().to_vec(), db));
            }
            Op::Sum(x) => {
                send(*x, Tensor::full(val(*x).shape().to_vec(), gd[0]));
            }
            Op::Mean(x) => {
                let xv = val(*x);
                send(*x, Tensor::full(xv.shape().to_vec(), gd[0] / T::from_usize(xv.len())));
            }
            Op::Mse(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                let scale = T::from_f64(2.0) * gd[0] / T::from_usize(av.len());
                let da: Vec<T> =
                    av.data().iter().zip(bv.data()).map(|(&x, &y)| (x - y) * scale).collect();
                if wants(*b) {
                    send(*b, Tensor::from_parts(bv.shape().to_vec(), da.iter().map(|&v| -v).collect()));
                }
                send(*a, Tensor::from_parts(av.shape().to_vec(), da));
            }
            Op::CrossEntropy { logits, labels } => {
                let lv = val(*logits);
                let c = *lv.shape().last().unwrap();
                let scale = gd[0] / T::from_usize(labels.len());
                let mut dl = vec![T::zero(); lv.len()];
                for (r, &label) in labels.iter().enumerate() {
                    let row = &lv.data()[r * c..(r + 1) * c];
                    let probs = softmax_row(row);
                    for j in 0..c {
                        let target = if j == label { T::one() } else { T::zero() };
                        dl[r * c + j] = (probs[j] - target) * scale;
                    }
                }
                send(*logits, Tensor::from_parts(lv.shape().to_vec(), dl));
            }
            Op::KlDiv { log_p, log_q } => {
                let (pv, qv) = (val(*log_p), val(*log_q));
                let c = *pv.shape().last().unwrap();
                let rows = pv.len() / c;
                let scale = gd[0] / T::from_usize(rows);
                let mut dp = vec![T::zero(); pv.len()];
                let mut dq = vec![T::zero(); qv.len()];
                for i in 0..pv.len() {
                    let (lp, lq) = (pv.data()[i], qv.data()[i]);
                    let p = lp.exp();
                    if p > T::zero() {
                        dp[i] = scale * p * (lp - lq + T::one());
                        dq[i] = -scale * p;
                    }
                }
                send(*log_p, Tensor::from_parts(pv.shape().to_vec(), dp));
                send(*log_q, Tensor::from_parts(qv.shape().to_vec(), dq));
            }
        }
    }
}

/// Gradients produced by one [`Tape::backward`] call.
#[derive(Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
    params: BTreeMap<(usize, ParamId), Var>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient of `v`, or `None` if the loss does not depend on it.
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient of parameter `id` of `store`.
    pub fn param(&self, store: &ParamStore<T>, id: ParamId) -> Option<&Tensor<T>> {
        self.params.get(&(store.uid(), id)).and_then(|&v| self.get(v))
    }

    /// Adds the gradients of `store`'s parameters; parameters bound from
    /// other stores are skipped.
    pub fn accumulate_into(&self, store: &mut ParamStore<T>) {
        let uid = store.uid();
        for (&(owner, id), &v) in &self.params {
            if owner != uid {
                continue;
            }
            if let Some(g) = self.get(v) {
                store.accumulate_grad(id, g);
            }
        }
    }
}

fn op_inputs<T>(op: &Op<T>) -> Vec<Var> {
    match op {
        Op::Leaf | Op::Param => Vec::new(),
        Op::Add(a, b) | Op::AddBroadcast(a, b) | Op::Mse(a, b) => vec![*a, *b],
        Op::Scale(x, _)
        | Op::Relu(x)
        | Op::Gelu(x)
        | Op::Softmax(x)
        | Op::LogSoftmax(x)
        | Op::Reshape(x)
        | Op::Sum(x)
        | Op::Mean(x) => vec![*x],
        Op::Linear { x, w, b } | Op::Conv2d { x, w, b, .. } => {
            let mut v = vec![*x, *w];
            v.extend(b.iter().copied());
            v
        }
        Op::MatMul { a, b, .. } | Op::Concat { a, b } => vec![*a, *b],
        Op::MaxPool2d { x, .. } | Op::Permute { x, .. } => vec![*x],
        Op::LayerNorm { x, gamma, beta, .. } => vec![*x, *gamma, *beta],
        Op::PrependToken { seq, token } => vec![*seq, *token],
        Op::SelectToken { seq, .. } => vec![*seq],
        Op::CrossEntropy { logits, .. } => vec![*logits],
        Op::KlDiv { log_p, log_q } => vec![*log_p, *log_q],
    }
}

fn column_sums<T: Scalar>(data: &[T], width: usize) -> Vec<T> {
    let mut out = vec![T::zero(); width];
    for row in data.chunks(width) {
        for (o, &v) in out.iter_mut().zip(row) {
            *o += v;
        }
    }
    out
}

pub(crate) fn softmax_row<T: Scalar>(row: &[T]) -> Vec<T> {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let exps: Vec<T> = row.iter().map(|&v| (v - max).exp()).collect();
    let sum: T = exps.iter().copied().sum();
    exps.into_iter().map(|v| v / sum).collect()
}

const GELU_K: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_C: f64 = 0.044_715;

pub(crate) fn gelu_value<T: Scalar>(x: T) -> T {
    let k = T::from_f64(GELU_K);
    let c = T::from_f64(GELU_C);
    let half = T::from_f64(0.5);
    half * x * (T::one() + (k * (x + c * x * x * x)).tanh())
}

fn gelu_grad<T: Scalar>(x: T) -> T {
    let k = T::from_f64(GELU_K);
    let c = T::from_f64(GELU_C);
    let half = T::from_f64(0.5);
    let t = (k * (x + c * x * x * x)).tanh();
    half * (T::one() + t) + half * x * (T::one() - t * t) * k * (T::one() + T::from_f64(3.0) * c * x * x)
}

pub(crate) fn permute_tensor<T: Scalar>(t: &Tensor<T>, axes: &[usize]) -> Tensor<T> {
    let in_shape = t.shape();
    let rank = in_shape.len();
    let mut in_strides = vec![1usize; rank];
    for i in (0..rank.saturating_sub(1)).rev() {
        in_strides[i] = in_strides[i + 1] * in_shape[i + 1];
    }
    let out_shape: Vec<usize> = axes.iter().map(|&a| in_shape[a]).collect();
    let strides: Vec<usize> = axes.iter().map(|&a| in_strides[a]).collect();
    let total = numel(&out_shape);
    let mut out = Vec::with_capacity(total);
    let mut idx = vec![0usize; rank];
    let src = t.data();
    let inner = rank - 1;
    let (inner_len, inner_stride) = (out_shape[inner], strides[inner]);
    loop {
        let base: usize = idx.iter().zip(&strides).map(|(i, s)| i * s).sum();
        for j in 0..inner_len {
            out.push(src[base + j * inner_stride]);
        }
        // advance all but the innermost axis
        let mut axis = inner;
        loop {
            if axis == 0 {
                return Tensor::from_parts(out_shape, out);
            }
            axis -= 1;
            idx[axis] += 1;
            if idx[axis] < out_shape[axis] {
                break;
            }
            idx[axis] = 0;
        }
    }
}
