//! Tape-based reverse-mode automatic differentiation.
//!
//! A [`Graph`] records every operation in execution order. Because a node can
//! only reference nodes created before it, walking the tape backwards visits
//! nodes in exact reverse topological order.

use alloc::vec;
use alloc::vec::Vec;
use core::sync::atomic::{AtomicU32, Ordering};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{self, Pad2d};
use crate::real::Real;
use crate::tensor::Tensor;

static NEXT_GRAPH: AtomicU32 = AtomicU32::new(1);

/// Handle to a value recorded on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var {
    graph: u32,
    index: u32,
}

impl Var {
    pub fn index(self) -> usize {
        self.index as usize
    }
}

/// How a convolution fills the border.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Padding {
    /// Valid convolution; the output shrinks by `k − 1`.
    #[default]
    None,
    /// Mirror without repeating the edge pixel.
    Reflect,
    Zero,
}

enum Op<T> {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, T),
    BiasAdd(usize, usize),
    MatMul(usize, usize),
    Reshape(usize),
    Pad {
        x: usize,
        pad: Pad2d,
        reflect: bool,
    },
    Conv2d {
        x: usize,
        w: usize,
        cols: Vec<T>,
    },
    EdgeDetect {
        x: usize,
        w: usize,
        alpha: usize,
        bias: usize,
        k: usize,
        rows: Vec<T>,
        proj: Vec<T>,
    },
    SumAll(usize),
    MeanAll(usize),
    MeanAxis {
        x: usize,
        axis: usize,
    },
    Abs(usize),
    Relu(usize),
    Sigmoid(usize),
    Softplus(usize),
    MaxPool {
        x: usize,
        argmax: Vec<usize>,
    },
    BatchNorm {
        x: usize,
        gamma: usize,
        beta: usize,
        xhat: Vec<T>,
        inv_std: Vec<T>,
        batch_stats: bool,
    },
    Softmax(usize),
    BceWithLogits {
        logits: usize,
        targets: Vec<T>,
    },
    CrossEntropy {
        logits: usize,
        labels: Vec<usize>,
        probs: Vec<T>,
    },
    Element {
        x: usize,
        index: usize,
    },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Per-channel statistics of a training-mode batch normalization.
#[derive(Debug, Clone)]
pub struct BatchStats<T> {
    pub mean: Vec<T>,
    /// Unbiased variance, as used for running estimates.
    pub var: Vec<T>,
}

/// Gradients produced by [`Graph::backward`].
pub struct Gradients<T> {
    graph: u32,
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Gradients<T> {
    /// Gradient of the loss with respect to `v`, if `v` requires gradients
    /// and influences the loss.
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        if v.graph != self.graph {
            return None;
        }
        self.grads.get(v.index()).and_then(Option::as_ref)
    }

    /// Like [`get`](Self::get) but substitutes zeros of the given shape.
    pub fn get_or_zeros(&self, v: Var, shape: &[usize]) -> Tensor<T> {
        self.get(v).cloned().unwrap_or_else(|| Tensor::zeros(shape))
    }
}

/// Tape of executed operations.
pub struct Graph<T = f32> {
    id: u32,
    nodes: Vec<Node<T>>,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn dims4(op: &'static str, shape: &[usize]) -> Result<[usize; 4]> {
    match *shape {
        [n, h, w, c] => Ok([n, h, w, c]),
        _ => Err(Error::invalid(op, alloc::format!("expected N×H×W×C input, got {shape:?}"))),
    }
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Graph {
            id: NEXT_GRAPH.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn idx(&self, v: Var) -> Result<usize> {
        if v.graph != self.id || v.index() >= self.nodes.len() {
            return Err(Error::DetachedVar);
        }
        Ok(v.index())
    }

    fn val(&self, i: usize) -> &Tensor<T> {
        &self.nodes[i].value
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[usize], name: &'static str) -> Result<Var> {
        let value = value.ensure_finite(name)?;
        let requires_grad = inputs.iter().any(|&i| self.nodes[i].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var {
            graph: self.id,
            index: (self.nodes.len() - 1) as u32,
        })
    }

    fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Var {
            graph: self.id,
            index: (self.nodes.len() - 1) as u32,
        }
    }

    /// Records a value that gradients do not flow into.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    /// Records a trainable leaf.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, true)
    }

    pub fn value(&self, v: Var) -> Result<&Tensor<T>> {
        Ok(self.val(self.idx(v)?))
    }

    fn binary_same(&self, op: &'static str, a: Var, b: Var) -> Result<(usize, usize)> {
        let (ia, ib) = (self.idx(a)?, self.idx(b)?);
        if self.val(ia).shape() != self.val(ib).shape() {
            return Err(Error::shapes(op, self.val(ia).shape(), self.val(ib).shape()));
        }
        Ok((ia, ib))
    }

    fn zip_with(&self, ia: usize, ib: usize, f: impl Fn(T, T) -> T) -> Tensor<T> {
        let (a, b) = (self.val(ia), self.val(ib));
        let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(a.shape(), data).expect("same shape")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = self.binary_same("add", a, b)?;
        let v = self.zip_with(ia, ib, |x, y| x + y);
        self.push(v, Op::Add(ia, ib), &[ia, ib], "add")
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = self.binary_same("sub", a, b)?;
        let v = self.zip_with(ia, ib, |x, y| x - y);
        self.push(v, Op::Sub(ia, ib), &[ia, ib], "sub")
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = self.binary_same("mul", a, b)?;
        let v = self.zip_with(ia, ib, |x, y| x * y);
        self.push(v, Op::Mul(ia, ib), &[ia, ib], "mul")
    }

    pub fn scale(&mut self, a: Var, factor: T) -> Result<Var> {
        let ia = self.idx(a)?;
        let v = self.val(ia).map(|x| x * factor);
        self.push(v, Op::Scale(ia, factor), &[ia], "scale")
    }

    /// Adds `b` (length = last dimension of `x`) to every row of `x`.
    pub fn bias_add(&mut self, x: Var, b: Var) -> Result<Var> {
        let (ix, ib) = (self.idx(x)?, self.idx(b)?);
        let (xs, bs) = (self.val(ix), self.val(ib));
        let c = *xs.shape().last().unwrap_or(&1);
        if bs.len() != c || xs.rank() == 0 {
            return Err(Error::shapes("bias_add", xs.shape(), bs.shape()));
        }
        let mut data = xs.data().to_vec();
        for row in data.chunks_mut(c) {
            for (o, &bv) in row.iter_mut().zip(bs.data()) {
                *o += bv;
            }
        }
        let v = Tensor::new(xs.shape(), data)?;
        self.push(v, Op::BiasAdd(ix, ib), &[ix, ib], "bias_add")
    }

    /// `a[m,k] · b[k,n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.idx(a)?, self.idx(b)?);
        let (at, bt) = (self.val(ia), self.val(ib));
        let (m, k, n) = match (at.shape(), bt.shape()) {
            (&[m, k], &[k2, n]) if k == k2 => (m, k, n),
            _ => return Err(Error::shapes("matmul", at.shape(), bt.shape())),
        };
        let v = Tensor::new(&[m, n], kernels::matmul(at.data(), bt.data(), m, k, n))?;
        self.push(v, Op::MatMul(ia, ib), &[ia, ib], "matmul")
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let ix = self.idx(x)?;
        let v = self.val(ix).clone().reshape(shape)?;
        self.push(v, Op::Reshape(ix), &[ix], "reshape")
    }

    /// Pads the spatial axes of `x[n,h,w,c]`. `Padding::None` returns `x`.
    pub fn pad2d(&mut self, x: Var, pad: Pad2d, mode: Padding) -> Result<Var> {
        let ix = self.idx(x)?;
        if mode == Padding::None || pad.is_zero() {
            return Ok(x);
        }
        let [n, h, w, c] = dims4("pad2d", self.val(ix).shape())?;
        let reflect = mode == Padding::Reflect;
        if reflect && (pad.top.max(pad.bottom) >= h || pad.left.max(pad.right) >= w) {
            return Err(Error::invalid("pad2d", "reflect padding must be smaller than the input"));
        }
        let map = kernels::pad_map(h, w, pad, reflect);
        let (hp, wp) = (h + pad.top + pad.bottom, w + pad.left + pad.right);
        let src = self.val(ix).data();
        let mut data = vec![T::zero(); n * hp * wp * c];
        for b in 0..n {
            for (p, s) in map.iter().enumerate() {
                if let Some(s) = s {
                    let d = (b * hp * wp + p) * c;
                    let s = (b * h * w + s) * c;
                    data[d..d + c].copy_from_slice(&src[s..s + c]);
                }
            }
        }
        let v = Tensor::new(&[n, hp, wp, c], data)?;
        self.push(v, Op::Pad { x: ix, pad, reflect }, &[ix], "pad2d")
    }

    /// Valid stride-1 convolution of `x[n,h,w,c]` with `w[kh,kw,c,f]`.
    pub fn conv2d(&mut self, x: Var, w: Var) -> Result<Var> {
        let (ix, iw) = (self.idx(x)?, self.idx(w)?);
        let (xs, ws) = (self.val(ix), self.val(iw));
        let [n, h, wd, c] = dims4("conv2d", xs.shape())?;
        let (kh, kw, f) = match *ws.shape() {
            [kh, kw, c2, f] if c2 == c => (kh, kw, f),
            _ => return Err(Error::shapes("conv2d", xs.shape(), ws.shape())),
        };
        if kh > h || kw > wd {
            return Err(Error::shapes("conv2d", xs.shape(), ws.shape()));
        }
        let (ho, wo) = (h - kh + 1, wd - kw + 1);
        let cols = kernels::im2col(xs.data(), [n, h, wd, c], kh, kw);
        let out = kernels::matmul(&cols, ws.data(), n * ho * wo, kh * kw * c, f);
        let v = Tensor::new(&[n, ho, wo, f], out)?;
        self.push(v, Op::Conv2d { x: ix, w: iw, cols }, &[ix, iw], "conv2d")
    }

    /// Bank of edge-detection units over valid locations of `x[n,h,w,c]`.
    ///
    /// `w[u,k,k]` is each unit's kernel (shared by all input channels),
    /// `alpha[u,c]` its channel weights and `bias[u]` its offset. Output is
    /// `[n,h−k+1,w−k+1,u]`.
    pub fn edge_detect(&mut self, x: Var, w: Var, alpha: Var, bias: Var) -> Result<Var> {
        let ids = [self.idx(x)?, self.idx(w)?, self.idx(alpha)?, self.idx(bias)?];
        let [ix, iw, ia, ib] = ids;
        let (xs, ws, al, bs) = (self.val(ix), self.val(iw), self.val(ia), self.val(ib));
        let [n, h, wd, c] = dims4("edge_detect", xs.shape())?;
        let (units, k) = match *ws.shape() {
            [u, k, k2] if k == k2 => (u, k),
            _ => return Err(Error::invalid("edge_detect", "kernel must be units×k×k")),
        };
        if al.shape() != [units, c] {
            return Err(Error::shapes("edge_detect", al.shape(), &[units, c]));
        }
        if bs.len() != units {
            return Err(Error::shapes("edge_detect", bs.shape(), &[units]));
        }
        if k > h || k > wd {
            return Err(Error::shapes("edge_detect", xs.shape(), ws.shape()));
        }
        let (out, cache) =
            kernels::edge_detect(xs.data(), [n, h, wd, c], k, ws.data(), al.data(), bs.data());
        let v = Tensor::new(&[n, h - k + 1, wd - k + 1, units], out)?;
        let op = Op::EdgeDetect {
            x: ix,
            w: iw,
            alpha: ia,
            bias: ib,
            k,
            rows: cache.rows,
            proj: cache.proj,
        };
        self.push(v, op, &ids, "edge_detect")
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let ix = self.idx(x)?;
        let v = Tensor::scalar(self.val(ix).sum());
        self.push(v, Op::SumAll(ix), &[ix], "sum")
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let ix = self.idx(x)?;
        if self.val(ix).is_empty() {
            return Err(Error::invalid("mean", "empty tensor"));
        }
        let v = Tensor::scalar(self.val(ix).mean());
        self.push(v, Op::MeanAll(ix), &[ix], "mean")
    }

    /// Mean over one axis, which is removed from the shape.
    pub fn mean_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let ix = self.idx(x)?;
        let xs = self.val(ix);
        if axis >= xs.rank() || xs.shape()[axis] == 0 {
            return Err(Error::invalid("mean_axis", alloc::format!("axis {axis} invalid for {:?}", xs.shape())));
        }
        let (outer, len, inner) = split_axis(xs.shape(), axis);
        let mut data = vec![T::zero(); outer * inner];
        let inv = T::one() / T::of_usize(len);
        for o in 0..outer {
            for l in 0..len {
                let src = &xs.data()[(o * len + l) * inner..(o * len + l + 1) * inner];
                for (d, &s) in data[o * inner..(o + 1) * inner].iter_mut().zip(src) {
                    *d += s;
                }
            }
        }
        data.iter_mut().for_each(|d| *d *= inv);
        let mut shape = xs.shape().to_vec();
        shape.remove(axis);
        let v = Tensor::new(&shape, data)?;
        self.push(v, Op::MeanAxis { x: ix, axis }, &[ix], "mean_axis")
    }

    fn unary(&mut self, x: Var, name: &'static str, f: impl Fn(T) -> T, op: impl FnOnce(usize) -> Op<T>) -> Result<Var> {
        let ix = self.idx(x)?;
        let v = self.val(ix).map(f);
        self.push(v, op(ix), &[ix], name)
    }

    pub fn abs(&mut self, x: Var) -> Result<Var> {
        self.unary(x, "abs", T::abs, Op::Abs)
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.unary(x, "relu", |v| v.max(T::zero()), Op::Relu)
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.unary(x, "sigmoid", kernels::sigmoid, Op::Sigmoid)
    }

    /// `ln(1 + eˣ)`, floored at the smallest positive normal so the result is
    /// strictly positive for any finite input.
    pub fn softplus(&mut self, x: Var) -> Result<Var> {
        self.unary(
            x,
            "softplus",
            |v| kernels::softplus(v).max(T::min_positive_value()),
            Op::Softplus,
        )
    }

    /// Non-overlapping `size×size` max pooling of `x[n,h,w,c]` (floor mode).
    pub fn maxpool2d(&mut self, x: Var, size: usize) -> Result<Var> {
        let ix = self.idx(x)?;
        let xs = self.val(ix);
        let [n, h, w, c] = dims4("maxpool2d", xs.shape())?;
        if size == 0 || size > h || size > w {
            return Err(Error::invalid("maxpool2d", "window does not fit the input"));
        }
        let (ho, wo) = (h / size, w / size);
        let src = xs.data();
        let mut data = Vec::with_capacity(n * ho * wo * c);
        let mut argmax = Vec::with_capacity(n * ho * wo * c);
        for b in 0..n {
            for y in 0..ho {
                for xo in 0..wo {
                    for ch in 0..c {
                        let mut best = usize::MAX;
                        let mut best_v = T::neg_infinity();
                        for dy in 0..size {
                            for dx in 0..size {
                                let i = ((b * h + y * size + dy) * w + xo * size + dx) * c + ch;
                                if src[i] > best_v {
                                    best_v = src[i];
                                    best = i;
                                }
                            }
                        }
                        data.push(best_v);
                        argmax.push(best);
                    }
                }
            }
        }
        let v = Tensor::new(&[n, ho, wo, c], data)?;
        self.push(v, Op::MaxPool { x: ix, argmax }, &[ix], "maxpool2d")
    }

    fn check_affine(&self, x: usize, gamma: usize, beta: usize) -> Result<usize> {
        let c = *self.val(x).shape().last().unwrap_or(&0);
        if c == 0 || self.val(gamma).len() != c || self.val(beta).len() != c {
            return Err(Error::shapes("batch_norm", self.val(x).shape(), self.val(gamma).shape()));
        }
        Ok(c)
    }

    /// Batch normalization over every axis but the last, using batch
    /// statistics. Returns the statistics for running-average updates.
    pub fn batch_norm_train(&mut self, x: Var, gamma: Var, beta: Var, eps: T) -> Result<(Var, BatchStats<T>)> {
        let (ix, ig, ibt) = (self.idx(x)?, self.idx(gamma)?, self.idx(beta)?);
        let c = self.check_affine(ix, ig, ibt)?;
        let xs = self.val(ix);
        let m = xs.len() / c;
        if m < 2 {
            return Err(Error::invalid("batch_norm", "training mode needs more than one value per channel"));
        }
        let mut mean = vec![T::zero(); c];
        for row in xs.data().chunks(c) {
            for (a, &v) in mean.iter_mut().zip(row) {
                *a += v;
            }
        }
        let mf = T::of_usize(m);
        mean.iter_mut().for_each(|a| *a /= mf);
        let mut var = vec![T::zero(); c];
        for row in xs.data().chunks(c) {
            for ((a, &v), &mu) in var.iter_mut().zip(row).zip(&mean) {
                *a += (v - mu) * (v - mu);
            }
        }
        var.iter_mut().for_each(|a| *a /= mf);
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let (g, b) = (self.val(ig).data(), self.val(ibt).data());
        let mut xhat = Vec::with_capacity(xs.len());
        let mut out = Vec::with_capacity(xs.len());
        for row in xs.data().chunks(c) {
            for ch in 0..c {
                let nh = (row[ch] - mean[ch]) * inv_std[ch];
                xhat.push(nh);
                out.push(g[ch] * nh + b[ch]);
            }
        }
        let v = Tensor::new(xs.shape(), out)?;
        let unbiased = T::of_usize(m) / T::of_usize(m - 1);
        let stats = BatchStats {
            mean,
            var: var.iter().map(|&v| v * unbiased).collect(),
        };
        let op = Op::BatchNorm {
            x: ix,
            gamma: ig,
            beta: ibt,
            xhat,
            inv_std,
            batch_stats: true,
        };
        Ok((self.push(v, op, &[ix, ig, ibt], "batch_norm")?, stats))
    }

    /// Batch normalization with frozen statistics: an affine map per channel.
    pub fn batch_norm_eval(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        running_mean: &[T],
        running_var: &[T],
        eps: T,
    ) -> Result<Var> {
        let (ix, ig, ibt) = (self.idx(x)?, self.idx(gamma)?, self.idx(beta)?);
        let c = self.check_affine(ix, ig, ibt)?;
        if running_mean.len() != c || running_var.len() != c {
            return Err(Error::shapes("batch_norm", &[c], &[running_mean.len()]));
        }
        let inv_std: Vec<T> = running_var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let xs = self.val(ix);
        let (g, b) = (self.val(ig).data(), self.val(ibt).data());
        let mut xhat = Vec::with_capacity(xs.len());
        let mut out = Vec::with_capacity(xs.len());
        for row in xs.data().chunks(c) {
            for ch in 0..c {
                let nh = (row[ch] - running_mean[ch]) * inv_std[ch];
                xhat.push(nh);
                out.push(g[ch] * nh + b[ch]);
            }
        }
        let v = Tensor::new(xs.shape(), out)?;
        let op = Op::BatchNorm {
            x: ix,
            gamma: ig,
            beta: ibt,
            xhat,
            inv_std,
            batch_stats: false,
        };
        self.push(v, op, &[ix, ig, ibt], "batch_norm")
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let ix = self.idx(x)?;
        let xs = self.val(ix);
        let c = *xs.shape().last().ok_or_else(|| Error::invalid("softmax", "scalar input"))?;
        let mut data = xs.data().to_vec();
        for row in data.chunks_mut(c) {
            softmax_row(row);
        }
        let v = Tensor::new(xs.shape(), data)?;
        self.push(v, Op::Softmax(ix), &[ix], "softmax")
    }

    /// Mean binary cross-entropy of `logits` (one per example) against 0/1
    /// targets.
    pub fn bce_with_logits(&mut self, logits: Var, targets: &[T]) -> Result<Var> {
        let il = self.idx(logits)?;
        let z = self.val(il);
        if z.len() != targets.len() || targets.is_empty() {
            return Err(Error::shapes("bce_with_logits", z.shape(), &[targets.len()]));
        }
        let total: T = z
            .data()
            .iter()
            .zip(targets)
            .map(|(&z, &t)| z.max(T::zero()) - z * t + (-z.abs()).libm_exp().libm_ln_1p())
            .sum();
        let v = Tensor::scalar(total / T::of_usize(targets.len()));
        let op = Op::BceWithLogits {
            logits: il,
            targets: targets.to_vec(),
        };
        self.push(v, op, &[il], "bce_with_logits")
    }

    /// Mean categorical cross-entropy of `logits[n,k]` against class indices.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let il = self.idx(logits)?;
        let z = self.val(il);
        let (n, k) = match *z.shape() {
            [n, k] if n == labels.len() && n > 0 => (n, k),
            _ => return Err(Error::shapes("cross_entropy", z.shape(), &[labels.len()])),
        };
        if labels.iter().any(|&l| l >= k) {
            return Err(Error::invalid("cross_entropy", "label out of range"));
        }
        let mut probs = z.data().to_vec();
        let mut total = T::zero();
        for (row, &l) in probs.chunks_mut(k).zip(labels) {
            softmax_row(row);
            total -= row[l].max(T::min_positive_value()).libm_ln();
        }
        let v = Tensor::scalar(total / T::of_usize(n));
        let op = Op::CrossEntropy {
            logits: il,
            labels: labels.to_vec(),
            probs,
        };
        self.push(v, op, &[il], "cross_entropy")
    }

    /// Scalar element at a flat offset.
    pub fn element(&mut self, x: Var, index: usize) -> Result<Var> {
        let ix = self.idx(x)?;
        let xs = self.val(ix);
        if index >= xs.len() {
            return Err(Error::invalid("element", "index out of range"));
        }
        let v = Tensor::scalar(xs.data()[index]);
        self.push(v, Op::Element { x: ix, index }, &[ix], "element")
    }

    /// Reverse pass from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let il = self.idx(loss)?;
        let ls = self.val(il);
        if ls.len() != 1 {
            return Err(Error::NonScalarLoss(ls.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[il] = Some(Tensor::full(ls.shape(), T::one()));
        for i in (0..=il).rev() {
            let Some(g) = grads[i].take() else { continue };
            if self.nodes[i].requires_grad {
                self.propagate(i, &g, &mut grads)?;
            }
            grads[i] = Some(g);
        }
        for (g, node) in grads.iter_mut().zip(&self.nodes) {
            if !node.requires_grad {
                *g = None;
            }
        }
        Ok(Gradients { graph: self.id, grads })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor<T>>], target: usize, data: Vec<T>) {
        if !self.nodes[target].requires_grad {
            return;
        }
        match &mut grads[target] {
            Some(g) => {
                for (a, b) in g.data_mut().iter_mut().zip(data) {
                    *a += b;
                }
            }
            slot @ None => {
                *slot = Some(Tensor::new(self.val(target).shape(), data).expect("gradient shape"));
            }
        }
    }

    fn wants(&self, i: usize) -> bool {
        self.nodes[i].requires_grad
    }

    fn propagate(&self, i: usize, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) -> Result<()> {
        let gd = g.data();
        let out = self.val(i);
        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.accumulate(grads, *a, gd.to_vec());
                self.accumulate(grads, *b, gd.to_vec());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, gd.to_vec());
                self.accumulate(grads, *b, gd.iter().map(|&v| -v).collect());
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.val(*a).data(), self.val(*b).data());
                if self.wants(*a) {
                    self.accumulate(grads, *a, gd.iter().zip(bv).map(|(&g, &y)| g * y).collect());
                }
                if self.wants(*b) {
                    self.accumulate(grads, *b, gd.iter().zip(av).map(|(&g, &x)| g * x).collect());
                }
            }
            Op::Scale(a, f) => {
                self.accumulate(grads, *a, gd.iter().map(|&v| v * *f).collect());
            }
            Op::BiasAdd(x, b) => {
                self.accumulate(grads, *x, gd.to_vec());
                if self.wants(*b) {
                    let c = self.val(*b).len();
                    let mut gb = vec![T::zero(); c];
                    for row in gd.chunks(c) {
                        for (a, &v) in gb.iter_mut().zip(row) {
                            *a += v;
                        }
                    }
                    self.accumulate(grads, *b, gb);
                }
            }
            Op::MatMul(a, b) => {
                let (at, bt) = (self.val(*a), self.val(*b));
                let (m, k) = (at.shape()[0], at.shape()[1]);
                let n = bt.shape()[1];
                if self.wants(*a) {
                    self.accumulate(grads, *a, kernels::matmul_a_bt(gd, bt.data(), m, n, k));
                }
                if self.wants(*b) {
                    self.accumulate(grads, *b, kernels::matmul_at_b(at.data(), gd, m, k, n));
                }
            }
            Op::Reshape(x) => self.accumulate(grads, *x, gd.to_vec()),
            Op::Pad { x, pad, reflect } => {
                let [n, h, w, c] = dims4("pad2d", self.val(*x).shape())?;
                let map = kernels::pad_map(h, w, *pad, *reflect);
                let hwp = map.len();
                let mut gx = vec![T::zero(); n * h * w * c];
                for b in 0..n {
                    for (p, s) in map.iter().enumerate() {
                        if let Some(s) = s {
                            let d = (b * h * w + s) * c;
                            let src = (b * hwp + p) * c;
                            for ch in 0..c {
                                gx[d + ch] += gd[src + ch];
                            }
                        }
                    }
                }
                self.accumulate(grads, *x, gx);
            }
            Op::Conv2d { x, w, cols } => {
                let dims = dims4("conv2d", self.val(*x).shape())?;
                let ws = self.val(*w).shape();
                let (kh, kw, f) = (ws[0], ws[1], ws[3]);
                let rows = out.len() / f;
                let width = kh * kw * dims[3];
                if self.wants(*w) {
                    self.accumulate(grads, *w, kernels::matmul_at_b(cols, gd, rows, width, f));
                }
                if self.wants(*x) {
                    let gcols = kernels::matmul_a_bt(gd, self.val(*w).data(), rows, f, width);
                    self.accumulate(grads, *x, kernels::col2im(&gcols, dims, kh, kw));
                }
            }
            Op::EdgeDetect { x, w, alpha, bias, k, rows, proj } => {
                let dims = dims4("edge_detect", self.val(*x).shape())?;
                let c = dims[3];
                let units = self.val(*bias).len();
                let al = self.val(*alpha).data();
                let locations = out.len() / units;
                let area = k * k;
                let mut gb = vec![T::zero(); units];
                let mut ga = vec![T::zero(); units * c];
                let mut gz = vec![T::zero(); proj.len()];
                for loc in 0..locations {
                    let go = &gd[loc * units..(loc + 1) * units];
                    for (a, &v) in gb.iter_mut().zip(go) {
                        *a += v;
                    }
                    for ch in 0..c {
                        let r = (loc * c + ch) * units;
                        for u in 0..units {
                            let z = proj[r + u];
                            ga[u * c + ch] += go[u] * z.abs();
                            gz[r + u] = go[u] * al[u * c + ch] * kernels::sign(z);
                        }
                    }
                }
                let n_rows = locations * c;
                if self.wants(*w) {
                    self.accumulate(grads, *w, kernels::matmul_at_b(&gz, rows, n_rows, units, area));
                }
                self.accumulate(grads, *alpha, ga);
                self.accumulate(grads, *bias, gb);
                if self.wants(*x) {
                    let grows = kernels::matmul(&gz, self.val(*w).data(), n_rows, units, area);
                    self.accumulate(grads, *x, kernels::centered_patches_adjoint(&grows, dims, *k));
                }
            }
            Op::SumAll(x) => {
                let n = self.val(*x).len();
                self.accumulate(grads, *x, vec![gd[0]; n]);
            }
            Op::MeanAll(x) => {
                let n = self.val(*x).len();
                self.accumulate(grads, *x, vec![gd[0] / T::of_usize(n); n]);
            }
            Op::MeanAxis { x, axis } => {
                let xs = self.val(*x);
                let (outer, len, inner) = split_axis(xs.shape(), *axis);
                let inv = T::one() / T::of_usize(len);
                let mut gx = vec![T::zero(); xs.len()];
                for o in 0..outer {
                    for l in 0..len {
                        let dst = &mut gx[(o * len + l) * inner..(o * len + l + 1) * inner];
                        for (d, &s) in dst.iter_mut().zip(&gd[o * inner..(o + 1) * inner]) {
                            *d = s * inv;
                        }
                    }
                }
                self.accumulate(grads, *x, gx);
            }
            Op::Abs(x) => {
                let xv = self.val(*x).data();
                self.accumulate(grads, *x, gd.iter().zip(xv).map(|(&g, &v)| g * kernels::sign(v)).collect());
            }
            Op::Relu(x) => {
                let xv = self.val(*x).data();
                let gx = gd
                    .iter()
                    .zip(xv)
                    .map(|(&g, &v)| if v > T::zero() { g } else { T::zero() })
                    .collect();
                self.accumulate(grads, *x, gx);
            }
            Op::Sigmoid(x) => {
                let y = out.data();
                self.accumulate(grads, *x, gd.iter().zip(y).map(|(&g, &y)| g * y * (T::one() - y)).collect());
            }
            Op::Softplus(x) => {
                let xv = self.val(*x).data();
                self.accumulate(grads, *x, gd.iter().zip(xv).map(|(&g, &v)| g * kernels::sigmoid(v)).collect());
            }
            Op::MaxPool { x, argmax } => {
                let mut gx = vec![T::zero(); self.val(*x).len()];
                for (&src, &g) in argmax.iter().zip(gd) {
                    gx[src] += g;
                }
                self.accumulate(grads, *x, gx);
            }
            Op::BatchNorm { x, gamma, beta, xhat, inv_std, batch_stats } => {
                let c = inv_std.len();
                let gam = self.val(*gamma).data();
                let mut gg = vec![T::zero(); c];
                let mut gbeta = vec![T::zero(); c];
                for (grow, hrow) in gd.chunks(c).zip(xhat.chunks(c)) {
                    for ch in 0..c {
                        gg[ch] += grow[ch] * hrow[ch];
                        gbeta[ch] += grow[ch];
                    }
                }
                if self.wants(*x) {
                    let gx = if *batch_stats {
                        let m = T::of_usize(xhat.len() / c);
                        let mut gx = Vec::with_capacity(xhat.len());
                        for (grow, hrow) in gd.chunks(c).zip(xhat.chunks(c)) {
                            for ch in 0..c {
                                let dh = grow[ch] * gam[ch];
                                let sum_dh = gbeta[ch] * gam[ch];
                                let sum_dh_h = gg[ch] * gam[ch];
                                gx.push(inv_std[ch] / m * (m * dh - sum_dh - hrow[ch] * sum_dh_h));
                            }
                        }
                        gx
                    } else {
                        gd.chunks(c)
                            .flat_map(|grow| (0..c).map(move |ch| grow[ch] * gam[ch] * inv_std[ch]))
                            .collect()
                    };
                    self.accumulate(grads, *x, gx);
                }
                self.accumulate(grads, *gamma, gg);
                self.accumulate(grads, *beta, gbeta);
            }
            Op::Softmax(x) => {
                let y = out.data();
                let c = *out.shape().last().expect("softmax rank");
                let mut gx = Vec::with_capacity(y.len());
                for (grow, yrow) in gd.chunks(c).zip(y.chunks(c)) {
                    let dot: T = grow.iter().zip(yrow).map(|(&a, &b)| a * b).sum();
                    gx.extend(grow.iter().zip(yrow).map(|(&g, &y)| y * (g - dot)));
                }
                self.accumulate(grads, *x, gx);
            }
            Op::BceWithLogits { logits, targets } => {
                let z = self.val(*logits).data();
                let scale = gd[0] / T::of_usize(targets.len());
                let gx = z
                    .iter()
                    .zip(targets)
                    .map(|(&z, &t)| (kernels::sigmoid(z) - t) * scale)
                    .collect();
                self.accumulate(grads, *logits, gx);
            }
            Op::CrossEntropy { logits, labels, probs } => {
                let k = probs.len() / labels.len();
                let scale = gd[0] / T::of_usize(labels.len());
                let mut gx: Vec<T> = probs.iter().map(|&p| p * scale).collect();
                for (row, &l) in labels.iter().enumerate() {
                    gx[row * k + l] -= scale;
                }
                self.accumulate(grads, *logits, gx);
            }
            Op::Element { x, index } => {
                let mut gx = vec![T::zero(); self.val(*x).len()];
                gx[*index] = gd[0];
                self.accumulate(grads, *x, gx);
            }
        }
        Ok(())
    }
}

fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

pub(crate) fn softmax_row<T: Real>(row: &mut [T]) {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut total = T::zero();
    for v in row.iter_mut() {
        *v = (*v - max).libm_exp();
        total += *v;
    }
    for v in row.iter_mut() {
        *v /= total;
    }
}
