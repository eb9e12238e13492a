//! Differentiable operations recorded on a [`Tape`].

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::kernels::{self, ConvGeom};
use super::tape::{gelu_value, permute_tensor, softmax_row, Op};
use super::{Scalar, Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Output extent of a strided window along one axis, if the window fits.
pub fn conv_out_len(input: usize, kernel: usize, stride: usize, pad: usize) -> Option<usize> {
    if stride == 0 || kernel == 0 || kernel > input + 2 * pad {
        return None;
    }
    Some((input + 2 * pad - kernel) / stride + 1)
}

impl<T: Scalar> Tape<T> {
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(Error::shape("add", format!("{:?} vs {:?}", av.shape(), bv.shape())));
        }
        let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| x + y).collect();
        let out = Tensor::from_parts(av.shape().to_vec(), data);
        self.push(out, Op::Add(a, b), "add")
    }

    pub fn scale(&mut self, x: Var, c: T) -> Result<Var> {
        let out = self.value(x).map(|v| v * c);
        self.push(out, Op::Scale(x, c), "scale")
    }

    /// `x + y` where `y` matches the trailing dimensions of `x`.
    pub fn add_broadcast(&mut self, x: Var, y: Var) -> Result<Var> {
        let (xv, yv) = (self.value(x), self.value(y));
        let tail = yv.rank();
        if tail > xv.rank() || xv.shape()[xv.rank() - tail..] != *yv.shape() {
            return Err(Error::shape(
                "add_broadcast",
                format!("{:?} does not end with {:?}", xv.shape(), yv.shape()),
            ));
        }
        let n = yv.len();
        let mut data = xv.data().to_vec();
        for chunk in data.chunks_mut(n) {
            for (d, &v) in chunk.iter_mut().zip(yv.data()) {
                *d += v;
            }
        }
        let out = Tensor::from_parts(xv.shape().to_vec(), data);
        self.push(out, Op::AddBroadcast(x, y), "add_broadcast")
    }

    /// Affine map over the last axis: `x · w + b` with `w` of shape `[d_in, d_out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (xv, wv) = (self.value(x), self.value(w));
        if wv.rank() != 2 || xv.rank() == 0 || *xv.shape().last().unwrap() != wv.shape()[0] {
            return Err(Error::shape(
                "linear",
                format!("input {:?} incompatible with weight {:?}", xv.shape(), wv.shape()),
            ));
        }
        let (din, dout) = (wv.shape()[0], wv.shape()[1]);
        let rows = xv.len() / din;
        let mut data = vec![T::zero(); rows * dout];
        if let Some(b) = b {
            let bv = self.value(b);
            if bv.shape() != [dout] {
                return Err(Error::shape("linear", format!("bias {:?}, expected [{dout}]", bv.shape())));
            }
            for row in data.chunks_mut(dout) {
                row.copy_from_slice(bv.data());
            }
        }
        kernels::gemm_nn(rows, din, dout, xv.data(), wv.data(), &mut data);
        let mut shape = xv.shape().to_vec();
        *shape.last_mut().unwrap() = dout;
        self.push(Tensor::from_parts(shape, data), Op::Linear { x, w, b }, "linear")
    }

    /// Batched matrix product over the last two axes. With `trans_b`, `b` is
    /// given as `[..., n, k]` and used transposed.
    pub fn matmul(&mut self, a: Var, b: Var, trans_b: bool) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let r = av.rank();
        let bad = || Error::shape("matmul", format!("{:?} × {:?} (trans_b={trans_b})", av.shape(), bv.shape()));
        if r < 2 || bv.rank() != r || av.shape()[..r - 2] != bv.shape()[..r - 2] {
            return Err(bad());
        }
        let (m, k) = (av.shape()[r - 2], av.shape()[r - 1]);
        let (kb, n) = if trans_b {
            (bv.shape()[r - 1], bv.shape()[r - 2])
        } else {
            (bv.shape()[r - 2], bv.shape()[r - 1])
        };
        if k != kb {
            return Err(bad());
        }
        let batches = av.len() / (m * k);
        let mut data = vec![T::zero(); batches * m * n];
        for i in 0..batches {
            let aa = &av.data()[i * m * k..(i + 1) * m * k];
            let bb = &bv.data()[i * k * n..(i + 1) * k * n];
            let cc = &mut data[i * m * n..(i + 1) * m * n];
            if trans_b {
                kernels::gemm_nt(m, k, n, aa, bb, cc);
            } else {
                kernels::gemm_nn(m, k, n, aa, bb, cc);
            }
        }
        let mut shape = av.shape().to_vec();
        shape[r - 1] = n;
        self.push(Tensor::from_parts(shape, data), Op::MatMul { a, b, trans_b }, "matmul")
    }

    /// 2-D convolution of `[B, C_in, H, W]` (or unbatched `[C_in, H, W]`) input
    /// with `[C_out, C_in, kh, kw]` weights.
    pub fn conv2d(
        &mut self,
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: (usize, usize),
        padding: (usize, usize),
    ) -> Result<Var> {
        let (xv, wv) = (self.value(x), self.value(w));
        let unbatched = xv.rank() == 3;
        if !(xv.rank() == 3 || xv.rank() == 4) || wv.rank() != 4 {
            return Err(Error::shape(
                "conv2d",
                format!("input {:?} / weight {:?} must be rank 3-4 / 4", xv.shape(), wv.shape()),
            ));
        }
        let s = xv.shape();
        let (batch, c_in, h, wd) = if unbatched { (1, s[0], s[1], s[2]) } else { (s[0], s[1], s[2], s[3]) };
        let (c_out, wc, kh, kw) = (wv.shape()[0], wv.shape()[1], wv.shape()[2], wv.shape()[3]);
        if wc != c_in {
            return Err(Error::shape(
                "conv2d",
                format!("input has {c_in} channels, weight expects {wc}"),
            ));
        }
        let (Some(ho), Some(wo)) = (
            conv_out_len(h, kh, stride.0, padding.0),
            conv_out_len(wd, kw, stride.1, padding.1),
        ) else {
            return Err(Error::shape(
                "conv2d",
                format!(
                    "kernel {kh}×{kw} stride {stride:?} padding {padding:?} does not fit input {h}×{wd}"
                ),
            ));
        };
        let geom = ConvGeom { c_in, h, w: wd, kh, kw, sh: stride.0, sw: stride.1, ph: padding.0, pw: padding.1, ho, wo };
        let (p, q) = (geom.patch_len(), geom.positions());
        let bias = match b {
            Some(b) => {
                let bv = self.value(b);
                if bv.shape() != [c_out] {
                    return Err(Error::shape("conv2d", format!("bias {:?}, expected [{c_out}]", bv.shape())));
                }
                Some(bv.data().to_vec())
            }
            None => None,
        };
        let img = c_in * h * wd;
        let mut cols = vec![T::zero(); p * q];
        let mut data = vec![T::zero(); batch * c_out * q];
        for bi in 0..batch {
            kernels::im2col(&geom, &xv.data()[bi * img..(bi + 1) * img], &mut cols);
            let out = &mut data[bi * c_out * q..(bi + 1) * c_out * q];
            if let Some(bias) = &bias {
                for (co, chunk) in out.chunks_mut(q).enumerate() {
                    chunk.iter_mut().for_each(|v| *v = bias[co]);
                }
            }
            kernels::gemm_nn(c_out, p, q, wv.data(), &cols, out);
        }
        let shape = if unbatched { vec![c_out, ho, wo] } else { vec![batch, c_out, ho, wo] };
        self.push(
            Tensor::from_parts(shape, data),
            Op::Conv2d { x, w, b, geom, batch, c_out },
            "conv2d",
        )
    }

    /// Max pooling without padding over the last two axes of a rank-3/4 input.
    pub fn max_pool2d(&mut self, x: Var, kernel: (usize, usize), stride: (usize, usize)) -> Result<Var> {
        let xv = self.value(x);
        let r = xv.rank();
        if r < 3 {
            return Err(Error::shape("max_pool2d", format!("input {:?} must be rank 3-4", xv.shape())));
        }
        let (h, w) = (xv.shape()[r - 2], xv.shape()[r - 1]);
        let (Some(ho), Some(wo)) = (
            conv_out_len(h, kernel.0, stride.0, 0),
            conv_out_len(w, kernel.1, stride.1, 0),
        ) else {
            return Err(Error::shape(
                "max_pool2d",
                format!("window {kernel:?} stride {stride:?} does not fit {h}×{w}"),
            ));
        };
        let planes = xv.len() / (h * w);
        let mut data = Vec::with_capacity(planes * ho * wo);
        let mut argmax = Vec::with_capacity(planes * ho * wo);
        for pl in 0..planes {
            let base = pl * h * w;
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut best = T::neg_infinity();
                    let mut at = 0;
                    for ki in 0..kernel.0 {
                        for kj in 0..kernel.1 {
                            let idx = base + (oy * stride.0 + ki) * w + ox * stride.1 + kj;
                            let v = xv.data()[idx];
                            if v > best {
                                best = v;
                                at = idx;
                            }
                        }
                    }
                    data.push(best);
                    argmax.push(at);
                }
            }
        }
        let mut shape = xv.shape().to_vec();
        shape[r - 2] = ho;
        shape[r - 1] = wo;
        self.push(Tensor::from_parts(shape, data), Op::MaxPool2d { x, argmax }, "max_pool2d")
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).map(|v| if v > T::zero() { v } else { T::zero() });
        self.push(out, Op::Relu(x), "relu")
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).map(gelu_value);
        self.push(out, Op::Gelu(x), "gelu")
    }

    /// Normalizes each row of the last axis, then applies `gamma`/`beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let (xv, gv, bv) = (self.value(x), self.value(gamma), self.value(beta));
        let e = gv.len();
        if xv.rank() == 0 || *xv.shape().last().unwrap() != e || gv.shape() != [e] || bv.shape() != [e] {
            return Err(Error::shape(
                "layer_norm",
                format!("input {:?}, gamma {:?}, beta {:?}", xv.shape(), gv.shape(), bv.shape()),
            ));
        }
        let rows = xv.len() / e;
        let inv_e = T::one() / T::from_usize(e);
        let eps = T::from_f64(eps);
        let mut mean = Vec::with_capacity(rows);
        let mut rstd = Vec::with_capacity(rows);
        let mut data = Vec::with_capacity(xv.len());
        for row in xv.data().chunks(e) {
            let mu = row.iter().copied().sum::<T>() * inv_e;
            let var = row.iter().map(|&v| (v - mu) * (v - mu)).sum::<T>() * inv_e;
            let rs = T::one() / (var + eps).sqrt();
            for j in 0..e {
                data.push((row[j] - mu) * rs * gv.data()[j] + bv.data()[j]);
            }
            mean.push(mu);
            rstd.push(rs);
        }
        let out = Tensor::from_parts(xv.shape().to_vec(), data);
        self.push(out, Op::LayerNorm { x, gamma, beta, mean, rstd }, "layer_norm")
    }

    /// Softmax over the last axis, stabilized by max subtraction.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        let n = *xv.shape().last().ok_or_else(|| Error::shape("softmax", "rank-0 input"))?;
        let mut data = Vec::with_capacity(xv.len());
        for row in xv.data().chunks(n) {
            data.extend(softmax_row(row));
        }
        let out = Tensor::from_parts(xv.shape().to_vec(), data);
        self.push(out, Op::Softmax(x), "softmax")
    }

    /// Log-softmax over the last axis.
    pub fn log_softmax(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        let n = *xv.shape().last().ok_or_else(|| Error::shape("log_softmax", "rank-0 input"))?;
        let mut data = Vec::with_capacity(xv.len());
        for row in xv.data().chunks(n) {
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let lse = row.iter().map(|&v| (v - max).exp()).sum::<T>().ln() + max;
            data.extend(row.iter().map(|&v| v - lse));
        }
        let out = Tensor::from_parts(xv.shape().to_vec(), data);
        self.push(out, Op::LogSoftmax(x), "log_softmax")
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x).clone().reshape(shape.to_vec())?;
        self.push(out, Op::Reshape(x), "reshape")
    }

    /// Reorders axes: output axis `i` is input axis `axes[i]`.
    pub fn permute(&mut self, x: Var, axes: &[usize]) -> Result<Var> {
        let xv = self.value(x);
        let mut seen = vec![false; xv.rank()];
        if axes.len() != xv.rank() || xv.rank() == 0 {
            return Err(Error::shape("permute", format!("axes {axes:?} for shape {:?}", xv.shape())));
        }
        for &a in axes {
            if a >= seen.len() || seen[a] {
                return Err(Error::shape("permute", format!("invalid axes {axes:?}")));
            }
            seen[a] = true;
        }
        let out = permute_tensor(xv, axes);
        self.push(out, Op::Permute { x, axes: axes.to_vec() }, "permute")
    }

    /// Prepends `token` (`[e]`) to every sequence of a `[B, n, e]` batch.
    pub fn prepend_token(&mut self, seq: Var, token: Var) -> Result<Var> {
        let (sv, tv) = (self.value(seq), self.value(token));
        if sv.rank() != 3 || tv.len() != sv.shape()[2] {
            return Err(Error::shape(
                "prepend_token",
                format!("sequence {:?}, token {:?}", sv.shape(), tv.shape()),
            ));
        }
        let (b, n, e) = (sv.shape()[0], sv.shape()[1], sv.shape()[2]);
        let mut data = Vec::with_capacity(b * (n + 1) * e);
        for bi in 0..b {
            data.extend_from_slice(tv.data());
            data.extend_from_slice(&sv.data()[bi * n * e..(bi + 1) * n * e]);
        }
        let out = Tensor::from_parts(vec![b, n + 1, e], data);
        self.push(out, Op::PrependToken { seq, token }, "prepend_token")
    }

    /// Row `index` of every sequence in a `[B, l, e]` batch, as `[B, e]`.
    pub fn select_token(&mut self, seq: Var, index: usize) -> Result<Var> {
        let sv = self.value(seq);
        if sv.rank() != 3 || index >= sv.shape()[1] {
            return Err(Error::shape("select_token", format!("index {index} of {:?}", sv.shape())));
        }
        let (b, l, e) = (sv.shape()[0], sv.shape()[1], sv.shape()[2]);
        let mut data = Vec::with_capacity(b * e);
        for bi in 0..b {
            let at = (bi * l + index) * e;
            data.extend_from_slice(&sv.data()[at..at + e]);
        }
        self.push(Tensor::from_parts(vec![b, e], data), Op::SelectToken { seq, index }, "select_token")
    }

    /// Concatenation along the last axis.
    pub fn concat_last(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let r = av.rank();
        if r == 0 || bv.rank() != r || av.shape()[..r - 1] != bv.shape()[..r - 1] {
            return Err(Error::shape("concat_last", format!("{:?} with {:?}", av.shape(), bv.shape())));
        }
        let (ea, eb) = (av.shape()[r - 1], bv.shape()[r - 1]);
        let rows = av.len() / ea;
        let mut data = Vec::with_capacity(av.len() + bv.len());
        for i in 0..rows {
            data.extend_from_slice(&av.data()[i * ea..(i + 1) * ea]);
            data.extend_from_slice(&bv.data()[i * eb..(i + 1) * eb]);
        }
        let mut shape = av.shape().to_vec();
        shape[r - 1] = ea + eb;
        self.push(Tensor::from_parts(shape, data), Op::Concat { a, b }, "concat_last")
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).data().iter().copied().sum::<T>();
        self.push(Tensor::scalar(s), Op::Sum(x), "sum")
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        let s = xv.data().iter().copied().sum::<T>() / T::from_usize(xv.len());
        self.push(Tensor::scalar(s), Op::Mean(x), "mean")
    }

    /// Mean of squared elementwise differences.
    pub fn mse_loss(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(Error::shape("mse_loss", format!("{:?} vs {:?}", av.shape(), bv.shape())));
        }
        let s = av.data().iter().zip(bv.data()).map(|(&x, &y)| (x - y) * (x - y)).sum::<T>();
        let out = Tensor::scalar(s / T::from_usize(av.len()));
        self.push(out, Op::Mse(a, b), "mse_loss")
    }

    /// Mean negative log-likelihood of `labels` under softmax(`logits`).
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let lv = self.value(logits);
        if lv.rank() != 2 || lv.shape()[0] != labels.len() {
            return Err(Error::shape(
                "cross_entropy",
                format!("logits {:?} with {} labels", lv.shape(), labels.len()),
            ));
        }
        let c = lv.shape()[1];
        let mut total = T::zero();
        for (row, &label) in lv.data().chunks(c).zip(labels) {
            if label >= c {
                return Err(Error::LabelOutOfRange { label, classes: c });
            }
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let lse = row.iter().map(|&v| (v - max).exp()).sum::<T>().ln() + max;
            total += lse - row[label];
        }
        let out = Tensor::scalar(total / T::from_usize(labels.len()));
        self.push(out, Op::CrossEntropy { logits, labels: labels.to_vec() }, "cross_entropy")
    }

    /// Mean over rows of `Σ p·(log p − log q)` for log-probability inputs.
    pub fn kl_div(&mut self, log_p: Var, log_q: Var) -> Result<Var> {
        let (pv, qv) = (self.value(log_p), self.value(log_q));
        if pv.shape() != qv.shape() || pv.rank() == 0 {
            return Err(Error::shape("kl_div", format!("{:?} vs {:?}", pv.shape(), qv.shape())));
        }
        let c = *pv.shape().last().unwrap();
        #[cfg(debug_assertions)]
        for (name, t) in [("kl_div(log_p)", pv), ("kl_div(log_q)", qv)] {
            for (row, chunk) in t.data().chunks(c).enumerate() {
                let sum = chunk.iter().map(|v| v.exp().as_f64()).sum::<f64>();
                if (sum - 1.0).abs() > 1e-5 {
                    return Err(Error::NotNormalized { op: name, row, sum });
                }
            }
        }
        let rows = pv.len() / c;
        let mut total = T::zero();
        for (&lp, &lq) in pv.data().iter().zip(qv.data()) {
            let p = lp.exp();
            if p > T::zero() {
                total += p * (lp - lq);
            }
        }
        let out = Tensor::scalar(total / T::from_usize(rows));
        self.push(out, Op::KlDiv { log_p, log_q }, "kl_div")
    }
}
