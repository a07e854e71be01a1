//! Tape-based reverse-mode differentiation.
//!
//! Every op appends a node holding its output value and whatever it needs for
//! the backward pass; nodes are created in topological order by construction.
//! Tensors are NHWC for images and `[.., features]` elsewhere.

use crate::error::{Error, Result};
use crate::objective::{self, FocalParams};

use super::kernels::{self, ConvGeom};
use super::rng::Rng;
use super::scalar::Scalar;
use super::store::{ParamId, ParamStore};
use super::tensor::Tensor;

pub const BN_EPS: f64 = 1e-3;
pub const LN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(pub usize);

#[derive(Debug, Clone)]
enum Op<T> {
    Input,
    Param(ParamId),
    MatMul { a: Var, b: Var, ta: bool, tb: bool },
    Conv2d { x: Var, w: Var, g: ConvGeom, cout: usize },
    Depthwise { x: Var, w: Var, g: ConvGeom },
    BatchNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<T>, inv_std: Vec<f64>, batch_stats: bool },
    LayerNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<T>, inv_std: Vec<f64> },
    Relu6 { x: Var },
    Relu { x: Var },
    Softmax { x: Var },
    MeanPool { x: Var, groups: usize, inner: usize },
    Dropout { x: Var, mask: Vec<T> },
    Add { a: Var, b: Var },
    AddBroadcast { a: Var, b: Var },
    Scale { x: Var, c: T },
    Reshape { x: Var },
    Permute { x: Var, axes: Vec<usize> },
    WeightedSum { x: Var, w: Vec<T> },
    SumAll { x: Var },
    Focal { x: Var, labels: Vec<usize>, params: FocalParams, probs: Vec<f64> },
}

#[derive(Debug, Clone)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// Batch statistics produced by a training-mode batch norm.
#[derive(Debug, Clone)]
pub struct BnUpdate {
    pub mean_id: ParamId,
    pub var_id: ParamId,
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    param_vars: Vec<(ParamId, Var)>,
    bn_updates: Vec<BnUpdate>,
    pub training: bool,
    pub seed: u64,
    pub step: u64,
}

fn shape_err<S: Into<String>>(s: S) -> Error {
    Error::ShapeMismatch(s.into())
}

fn add_into<T: Scalar>(dst: &mut Option<Vec<T>>, delta: Vec<T>) {
    match dst {
        Some(d) => d.iter_mut().zip(delta).for_each(|(a, b)| *a = *a + b),
        None => *dst = Some(delta),
    }
}

fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

fn permute_data<T: Copy>(data: &[T], shape: &[usize], axes: &[usize]) -> (Vec<T>, Vec<usize>) {
    let out_shape: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
    let in_strides = strides(shape);
    let src_strides: Vec<usize> = axes.iter().map(|&a| in_strides[a]).collect();
    let mut out = Vec::with_capacity(data.len());
    let mut idx = vec![0usize; shape.len()];
    for _ in 0..data.len() {
        let off: usize = idx.iter().zip(&src_strides).map(|(i, s)| i * s).sum();
        out.push(data[off]);
        for d in (0..idx.len()).rev() {
            idx[d] += 1;
            if idx[d] < out_shape[d] {
                break;
            }
            idx[d] = 0;
        }
    }
    (out, out_shape)
}

struct MatDims {
    batch: usize,
    m: usize,
    k: usize,
    n: usize,
    shared: bool,
}

fn matmul_dims(a: &[usize], b: &[usize], ta: bool, tb: bool) -> Result<MatDims> {
    if a.len() < 2 || b.len() < 2 {
        return Err(shape_err(format!("matmul needs rank >= 2, got {a:?} x {b:?}")));
    }
    let (ar, br) = (a.len(), b.len());
    let (m, ka) = if ta { (a[ar - 1], a[ar - 2]) } else { (a[ar - 2], a[ar - 1]) };
    let (kb, n) = if tb { (b[br - 1], b[br - 2]) } else { (b[br - 2], b[br - 1]) };
    if ka != kb {
        return Err(shape_err(format!("matmul inner dims differ: {a:?} x {b:?}")));
    }
    let batch: usize = a[..ar - 2].iter().product();
    let shared = br == 2;
    if !shared && a[..ar - 2] != b[..br - 2] {
        return Err(shape_err(format!("matmul batch dims differ: {a:?} x {b:?}")));
    }
    Ok(MatDims { batch, m, k: ka, n, shared })
}

fn op_strides(rows: usize, cols: usize, transposed: bool) -> (isize, isize) {
    // Strides of op(X) where X is stored row-major as [rows, cols] of op(X) when not transposed.
    if transposed {
        (1, rows as isize)
    } else {
        (cols as isize, 1)
    }
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new(false, 0, 0)
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new(training: bool, seed: u64, step: u64) -> Self {
        Graph {
            nodes: Vec::new(),
            param_vars: Vec::new(),
            bn_updates: Vec::new(),
            training,
            seed,
            step,
        }
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
        &self.nodes[v.0].value.shape
    }

    pub fn take_bn_updates(&mut self) -> Vec<BnUpdate> {
        std::mem::take(&mut self.bn_updates)
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Var {
        let needs_grad = inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn input(&mut self, t: Tensor<T>) -> Var {
        self.nodes.push(Node {
            value: t,
            op: Op::Input,
            needs_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    /// Leaf for a stored parameter; repeated calls return the same node.
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        if let Some(&(_, v)) = self.param_vars.iter().find(|(p, _)| *p == id) {
            return v;
        }
        self.nodes.push(Node {
            value: store.get(id).clone(),
            op: Op::Param(id),
            needs_grad: store.is_trainable(id),
        });
        let v = Var(self.nodes.len() - 1);
        self.param_vars.push((id, v));
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var, ta: bool, tb: bool) -> Result<Var> {
        let (ash, bsh) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let d = matmul_dims(&ash, &bsh, ta, tb)?;
        let mut out_shape = ash[..ash.len() - 2].to_vec();
        out_shape.extend([d.m, d.n]);
        let mut y = vec![T::zero(); d.batch * d.m * d.n];
        let (av, bv) = (&self.nodes[a.0].value.data, &self.nodes[b.0].value.data);
        let sa = op_strides(d.m, d.k, ta);
        let sb = op_strides(d.k, d.n, tb);
        if d.shared && !ta {
            T::gemm(d.batch * d.m, d.k, d.n, av, sa, bv, sb, T::zero(), &mut y, (d.n as isize, 1));
        } else {
            for i in 0..d.batch {
                let ao = &av[i * d.m * d.k..];
                let bo = if d.shared { &bv[..] } else { &bv[i * d.k * d.n..] };
                T::gemm(d.m, d.k, d.n, ao, sa, bo, sb, T::zero(), &mut y[i * d.m * d.n..], (d.n as isize, 1));
            }
        }
        let value = Tensor::new(out_shape, y)?;
        Ok(self.push(value, Op::MatMul { a, b, ta, tb }, &[a, b]))
    }

    /// Dense layer: `x·W + b` over the last axis of `x`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let y = self.matmul(x, w, false, false)?;
        match b {
            Some(b) => self.add_broadcast(y, b),
            None => Ok(y),
        }
    }

    pub fn conv2d(&mut self, x: Var, w: Var, stride: usize) -> Result<Var> {
        let (xs, ws) = (self.shape(x).to_vec(), self.shape(w).to_vec());
        if xs.len() != 4 || ws.len() != 4 || ws[2] != xs[3] || stride == 0 {
            return Err(shape_err(format!("conv2d input {xs:?} with kernel {ws:?}")));
        }
        let g = ConvGeom::new(xs[0], xs[1], xs[2], xs[3], ws[0], ws[1], stride);
        let cout = ws[3];
        let y = kernels::conv2d_forward(&self.nodes[x.0].value.data, &self.nodes[w.0].value.data, &g, cout);
        let value = Tensor::new(vec![g.n, g.oh, g.ow, cout], y)?;
        Ok(self.push(value, Op::Conv2d { x, w, g, cout }, &[x, w]))
    }

    pub fn depthwise_conv2d(&mut self, x: Var, w: Var, stride: usize) -> Result<Var> {
        let (xs, ws) = (self.shape(x).to_vec(), self.shape(w).to_vec());
        if xs.len() != 4 || ws.len() != 3 || ws[2] != xs[3] || stride == 0 {
            return Err(shape_err(format!("depthwise input {xs:?} with kernel {ws:?}")));
        }
        let g = ConvGeom::new(xs[0], xs[1], xs[2], xs[3], ws[0], ws[1], stride);
        let y = kernels::depthwise_forward(&self.nodes[x.0].value.data, &self.nodes[w.0].value.data, &g);
        let value = Tensor::new(vec![g.n, g.oh, g.ow, g.c], y)?;
        Ok(self.push(value, Op::Depthwise { x, w, g }, &[x, w]))
    }

    /// Depthwise then pointwise convolution; `p` has shape `[1, 1, cin, cout]`.
    pub fn depthwise_separable_conv(&mut self, x: Var, d: Var, p: Var, stride: usize) -> Result<Var> {
        let h = self.depthwise_conv2d(x, d, stride)?;
        self.conv2d(h, p, 1)
    }

    /// Batch normalisation over every axis but the last.
    ///
    /// Training graphs use batch statistics and queue a running-stat update;
    /// inference graphs use the stored running statistics.
    pub fn batch_norm(
        &mut self,
        store: &ParamStore<T>,
        x: Var,
        gamma: ParamId,
        beta: ParamId,
        mean_id: ParamId,
        var_id: ParamId,
    ) -> Result<Var> {
        let gv = self.param(store, gamma);
        let bv = self.param(store, beta);
        let xs = self.shape(x).to_vec();
        let c = *xs.last().ok_or_else(|| shape_err("batch_norm on a scalar"))?;
        if self.shape(gv) != [c] || self.shape(bv) != [c] {
            return Err(shape_err(format!("batch_norm scale/shift for {c} channels")));
        }
        let xd = &self.nodes[x.0].value.data;
        let rows = xd.len() / c;
        let (mean, var) = if self.training {
            let mut mean = vec![0.0f64; c];
            let mut sq = vec![0.0f64; c];
            for r in xd.chunks_exact(c) {
                for j in 0..c {
                    mean[j] += r[j].f();
                }
            }
            mean.iter_mut().for_each(|m| *m /= rows as f64);
            for r in xd.chunks_exact(c) {
                for j in 0..c {
                    let d = r[j].f() - mean[j];
                    sq[j] += d * d;
                }
            }
            let var: Vec<f64> = sq.iter().map(|s| s / rows as f64).collect();
            self.bn_updates.push(BnUpdate {
                mean_id,
                var_id,
                mean: mean.clone(),
                var: var.clone(),
            });
            (mean, var)
        } else {
            (store.get(mean_id).to_f64(), store.get(var_id).to_f64())
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
        let gd = &self.nodes[gv.0].value.data;
        let bd = &self.nodes[bv.0].value.data;
        let mut xhat = Vec::with_capacity(xd.len());
        let mut y = Vec::with_capacity(xd.len());
        for r in xd.chunks_exact(c) {
            for j in 0..c {
                let h = (r[j].f() - mean[j]) * inv_std[j];
                xhat.push(T::of(h));
                y.push(T::of(h * gd[j].f() + bd[j].f()));
            }
        }
        let value = Tensor::new(xs, y)?;
        let batch_stats = self.training;
        Ok(self.push(
            value,
            Op::BatchNorm {
                x,
                gamma: gv,
                beta: bv,
                xhat,
                inv_std,
                batch_stats,
            },
            &[x, gv, bv],
        ))
    }

    /// Normalise the last axis, then scale and shift.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let d = *xs.last().ok_or_else(|| shape_err("layer_norm on a scalar"))?;
        if self.shape(gamma) != [d] || self.shape(beta) != [d] {
            return Err(shape_err(format!("layer_norm scale/shift for width {d}")));
        }
        let xd = &self.nodes[x.0].value.data;
        let gd = &self.nodes[gamma.0].value.data;
        let bd = &self.nodes[beta.0].value.data;
        let mut xhat = Vec::with_capacity(xd.len());
        let mut inv_std = Vec::with_capacity(xd.len() / d);
        let mut y = Vec::with_capacity(xd.len());
        for r in xd.chunks_exact(d) {
            let mean = r.iter().map(|v| v.f()).sum::<f64>() / d as f64;
            let var = r.iter().map(|v| (v.f() - mean).powi(2)).sum::<f64>() / d as f64;
            let is = 1.0 / (var + LN_EPS).sqrt();
            inv_std.push(is);
            for j in 0..d {
                let h = (r[j].f() - mean) * is;
                xhat.push(T::of(h));
                y.push(T::of(h * gd[j].f() + bd[j].f()));
            }
        }
        let value = Tensor::new(xs, y)?;
        Ok(self.push(value, Op::LayerNorm { x, gamma, beta, xhat, inv_std }, &[x, gamma, beta]))
    }

    fn unary(&mut self, x: Var, f: impl Fn(T) -> T, op: Op<T>) -> Var {
        let t = &self.nodes[x.0].value;
        let value = Tensor {
            shape: t.shape.clone(),
            data: t.data.iter().map(|&v| f(v)).collect(),
            requires_grad: false,
        };
        self.push(value, op, &[x])
    }

    pub fn relu6(&mut self, x: Var) -> Var {
        let six = T::of(6.0);
        self.unary(x, |v| v.max(T::zero()).min(six), Op::Relu6 { x })
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.max(T::zero()), Op::Relu { x })
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let c = T::of(c);
        self.unary(x, |v| v * c, Op::Scale { x, c })
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let c = *xs.last().ok_or_else(|| shape_err("softmax on a scalar"))?;
        let rows: Vec<f64> = self.nodes[x.0].value.to_f64();
        let p = objective::softmax_rows(&rows, c);
        let value = Tensor::new(xs, p.into_iter().map(T::of).collect())?;
        Ok(self.push(value, Op::Softmax { x }, &[x]))
    }

    /// Mean over all axes between the first and the last: `[N, .., C] -> [N, C]`.
    pub fn mean_pool(&mut self, x: Var) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        if xs.len() < 3 {
            return Err(shape_err(format!("pooling needs rank >= 3, got {xs:?}")));
        }
        let (n, c) = (xs[0], xs[xs.len() - 1]);
        let inner: usize = xs[1..xs.len() - 1].iter().product();
        let xd = &self.nodes[x.0].value.data;
        let mut y = Vec::with_capacity(n * c);
        for b in 0..n {
            let mut acc = vec![0.0f64; c];
            for s in 0..inner {
                let o = (b * inner + s) * c;
                for j in 0..c {
                    acc[j] += xd[o + j].f();
                }
            }
            y.extend(acc.iter().map(|a| T::of(a / inner as f64)));
        }
        let value = Tensor::new(vec![n, c], y)?;
        Ok(self.push(value, Op::MeanPool { x, groups: n, inner }, &[x]))
    }

    /// Spatial average over an NHWC map.
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        if self.shape(x).len() != 4 {
            return Err(shape_err(format!("global_avg_pool needs NHWC, got {:?}", self.shape(x))));
        }
        self.mean_pool(x)
    }

    /// Inverted dropout keyed by `(seed, layer, step)`; identity outside training or at `p = 0`.
    pub fn dropout(&mut self, x: Var, p: f64, layer: u64) -> Var {
        if !self.training || p <= 0.0 {
            return x;
        }
        let mut rng = Rng::keyed(self.seed, &[layer, self.step]);
        let keep = T::of(1.0 / (1.0 - p));
        let n = self.nodes[x.0].value.len();
        let mask: Vec<T> = (0..n).map(|_| if rng.uniform() < p { T::zero() } else { keep }).collect();
        let t = &self.nodes[x.0].value;
        let value = Tensor {
            shape: t.shape.clone(),
            data: t.data.iter().zip(&mask).map(|(&v, &m)| v * m).collect(),
            requires_grad: false,
        };
        self.push(value, Op::Dropout { x, mask }, &[x])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(shape_err(format!("add {:?} + {:?}", self.shape(a), self.shape(b))));
        }
        let (ad, bd) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let value = Tensor {
            shape: ad.shape.clone(),
            data: ad.data.iter().zip(&bd.data).map(|(&x, &y)| x + y).collect(),
            requires_grad: false,
        };
        Ok(self.push(value, Op::Add { a, b }, &[a, b]))
    }

    /// `a + b` where `b`'s shape is a suffix of `a`'s.
    pub fn add_broadcast(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ash, bsh) = (self.shape(a), self.shape(b));
        if bsh.len() > ash.len() || ash[ash.len() - bsh.len()..] != *bsh {
            return Err(shape_err(format!("cannot broadcast {bsh:?} onto {ash:?}")));
        }
        let (ad, bd) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let m = bd.len();
        let value = Tensor {
            shape: ad.shape.clone(),
            data: ad.data.iter().enumerate().map(|(i, &x)| x + bd.data[i % m]).collect(),
            requires_grad: false,
        };
        Ok(self.push(value, Op::AddBroadcast { a, b }, &[a, b]))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let t = &self.nodes[x.0].value;
        let value = Tensor::new(shape.to_vec(), t.data.clone())?;
        Ok(self.push(value, Op::Reshape { x }, &[x]))
    }

    pub fn permute(&mut self, x: Var, axes: &[usize]) -> Result<Var> {
        let t = &self.nodes[x.0].value;
        let mut sorted = axes.to_vec();
        sorted.sort_unstable();
        if sorted != (0..t.rank()).collect::<Vec<_>>() {
            return Err(shape_err(format!("invalid permutation {axes:?} for rank {}", t.rank())));
        }
        let (data, shape) = permute_data(&t.data, &t.shape, axes);
        let value = Tensor::new(shape, data)?;
        Ok(self.push(value, Op::Permute { x, axes: axes.to_vec() }, &[x]))
    }

    /// Scalar `Σ w ⊙ x` for a constant `w`.
    pub fn weighted_sum(&mut self, x: Var, w: &[f64]) -> Result<Var> {
        let t = &self.nodes[x.0].value;
        if w.len() != t.len() {
            return Err(shape_err(format!("weighted_sum with {} weights for {} values", w.len(), t.len())));
        }
        let s: f64 = t.data.iter().zip(w).map(|(v, w)| v.f() * w).sum();
        let w: Vec<T> = w.iter().map(|&v| T::of(v)).collect();
        Ok(self.push(Tensor::scalar(T::of(s)), Op::WeightedSum { x, w }, &[x]))
    }

    pub fn sum_all(&mut self, x: Var) -> Var {
        let s: f64 = self.nodes[x.0].value.data.iter().map(|v| v.f()).sum();
        self.push(Tensor::scalar(T::of(s)), Op::SumAll { x }, &[x])
    }

    /// Mean focal loss of softmax(`logits`), fused for a stable gradient.
    pub fn focal_loss(&mut self, logits: Var, labels: &[usize], params: &FocalParams) -> Result<Var> {
        let xs = self.shape(logits).to_vec();
        if xs.len() != 2 || xs[0] != labels.len() || xs[1] != params.classes() {
            return Err(shape_err(format!(
                "focal loss logits {xs:?} for {} labels and {} classes",
                labels.len(),
                params.classes()
            )));
        }
        let probs = objective::softmax_rows(&self.nodes[logits.0].value.to_f64(), xs[1]);
        let (mean, _) = objective::focal_loss(&probs, labels, params)?;
        Ok(self.push(
            Tensor::scalar(T::of(mean)),
            Op::Focal {
                x: logits,
                labels: labels.to_vec(),
                params: params.clone(),
                probs,
            },
            &[logits],
        ))
    }

    /// Gradients of a scalar node with respect to every parameter in a store of
    /// `n_params` entries. Unreached or frozen parameters get zero tensors.
    /// The graph is not modified, so repeated calls return identical results.
    pub fn backward(&self, loss: Var, store: &ParamStore<T>) -> Result<Vec<Tensor<T>>> {
        let lv = &self.nodes[loss.0].value;
        if lv.len() != 1 {
            return Err(Error::NonScalarLoss(lv.shape.clone()));
        }
        let mut grads: Vec<Option<Vec<T>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![T::one()]);
        let mut out: Vec<Tensor<T>> = store.entries.iter().map(|e| Tensor::zeros(&e.tensor.shape)).collect();
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            self.backprop(node, g, &mut grads, &mut out)?;
        }
        Ok(out)
    }

    fn val(&self, v: Var) -> &[T] {
        &self.nodes[v.0].value.data
    }

    fn backprop(&self, node: &Node<T>, g: Vec<T>, grads: &mut [Option<Vec<T>>], out: &mut [Tensor<T>]) -> Result<()> {
        match &node.op {
            Op::Input => {}
            Op::Param(id) => {
                if out[*id].len() != g.len() {
                    return Err(shape_err("parameter gradient shape"));
                }
                out[*id].data = g;
            }
            Op::MatMul { a, b, ta, tb } => {
                let d = matmul_dims(self.shape(*a), self.shape(*b), *ta, *tb)?;
                let (av, bv) = (self.val(*a), self.val(*b));
                let sa = op_strides(d.m, d.k, *ta);
                let sb = op_strides(d.k, d.n, *tb);
                let (batch, m) = if d.shared && !*ta { (1, d.batch * d.m) } else { (d.batch, d.m) };
                let (k, n) = (d.k, d.n);
                let swap = |s: (isize, isize)| (s.1, s.0);
                if self.ng(*a) {
                    let mut da = vec![T::zero(); av.len()];
                    for i in 0..batch {
                        let gi = &g[i * m * n..];
                        let bo = if d.shared { bv } else { &bv[i * k * n..] };
                        let dai = &mut da[i * m * k..];
                        if *ta {
                            T::gemm(k, n, m, bo, sb, gi, (1, n as isize), T::zero(), dai, (m as isize, 1));
                        } else {
                            T::gemm(m, n, k, gi, (n as isize, 1), bo, swap(sb), T::zero(), dai, (k as isize, 1));
                        }
                    }
                    add_into(&mut grads[a.0], da);
                }
                if self.ng(*b) {
                    let mut db = vec![T::zero(); bv.len()];
                    for i in 0..batch {
                        let gi = &g[i * m * n..];
                        let ao = &av[i * m * k..];
                        let dbi = if d.shared { &mut db[..] } else { &mut db[i * k * n..] };
                        if *tb {
                            T::gemm(n, m, k, gi, (1, n as isize), ao, sa, T::one(), dbi, (k as isize, 1));
                        } else {
                            T::gemm(k, m, n, ao, swap(sa), gi, (n as isize, 1), T::one(), dbi, (n as isize, 1));
                        }
                    }
                    add_into(&mut grads[b.0], db);
                }
            }
            Op::Conv2d { x, w, g: geom, cout } => {
                let (dx, dw) = kernels::conv2d_backward(self.val(*x), self.val(*w), &g, geom, *cout, self.ng(*x));
                if let Some(dx) = dx {
                    add_into(&mut grads[x.0], dx);
                }
                if self.ng(*w) {
                    add_into(&mut grads[w.0], dw);
                }
            }
            Op::Depthwise { x, w, g: geom } => {
                let (dx, dw) = kernels::depthwise_backward(self.val(*x), self.val(*w), &g, geom, self.ng(*x));
                if let Some(dx) = dx {
                    add_into(&mut grads[x.0], dx);
                }
                if self.ng(*w) {
                    add_into(&mut grads[w.0], dw);
                }
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                batch_stats,
            } => {
                let c = inv_std.len();
                let rows = xhat.len() / c;
                let gd = self.val(*gamma);
                let mut sum_g = vec![0.0f64; c];
                let mut sum_gx = vec![0.0f64; c];
                for (gr, hr) in g.chunks_exact(c).zip(xhat.chunks_exact(c)) {
                    for j in 0..c {
                        sum_g[j] += gr[j].f();
                        sum_gx[j] += gr[j].f() * hr[j].f();
                    }
                }
                if self.ng(*x) {
                    let mut dx = Vec::with_capacity(g.len());
                    let m = rows as f64;
                    for (gr, hr) in g.chunks_exact(c).zip(xhat.chunks_exact(c)) {
                        for j in 0..c {
                            let s = gd[j].f() * inv_std[j];
                            let v = if *batch_stats {
                                s * (gr[j].f() - sum_g[j] / m - hr[j].f() * sum_gx[j] / m)
                            } else {
                                s * gr[j].f()
                            };
                            dx.push(T::of(v));
                        }
                    }
                    add_into(&mut grads[x.0], dx);
                }
                if self.ng(*gamma) {
                    add_into(&mut grads[gamma.0], sum_gx.iter().map(|&v| T::of(v)).collect());
                }
                if self.ng(*beta) {
                    add_into(&mut grads[beta.0], sum_g.iter().map(|&v| T::of(v)).collect());
                }
            }
            Op::LayerNorm { x, gamma, beta, xhat, inv_std } => {
                let d = self.shape(*gamma)[0];
                let gd = self.val(*gamma);
                let mut dgamma = vec![0.0f64; d];
                let mut dbeta = vec![0.0f64; d];
                let mut dx = Vec::with_capacity(g.len());
                for ((gr, hr), &is) in g.chunks_exact(d).zip(xhat.chunks_exact(d)).zip(inv_std) {
                    let mut s1 = 0.0;
                    let mut s2 = 0.0;
                    for j in 0..d {
                        let gh = gr[j].f() * gd[j].f();
                        s1 += gh;
                        s2 += gh * hr[j].f();
                        dgamma[j] += gr[j].f() * hr[j].f();
                        dbeta[j] += gr[j].f();
                    }
                    for j in 0..d {
                        let gh = gr[j].f() * gd[j].f();
                        dx.push(T::of(is * (gh - s1 / d as f64 - hr[j].f() * s2 / d as f64)));
                    }
                }
                if self.ng(*x) {
                    add_into(&mut grads[x.0], dx);
                }
                if self.ng(*gamma) {
                    add_into(&mut grads[gamma.0], dgamma.iter().map(|&v| T::of(v)).collect());
                }
                if self.ng(*beta) {
                    add_into(&mut grads[beta.0], dbeta.iter().map(|&v| T::of(v)).collect());
                }
            }
            Op::Relu6 { x } => {
                let six = T::of(6.0);
                let dx = g
                    .iter()
                    .zip(self.val(*x))
                    .map(|(&gv, &xv)| if xv > T::zero() && xv < six { gv } else { T::zero() })
                    .collect();
                add_into(&mut grads[x.0], dx);
            }
            Op::Relu { x } => {
                let dx = g
                    .iter()
                    .zip(self.val(*x))
                    .map(|(&gv, &xv)| if xv > T::zero() { gv } else { T::zero() })
                    .collect();
                add_into(&mut grads[x.0], dx);
            }
            Op::Softmax { x } => {
                let c = *node.value.shape.last().unwrap();
                let y = &node.value.data;
                let mut dx = Vec::with_capacity(g.len());
                for (gr, yr) in g.chunks_exact(c).zip(y.chunks_exact(c)) {
                    let dot: f64 = gr.iter().zip(yr).map(|(a, b)| a.f() * b.f()).sum();
                    dx.extend(gr.iter().zip(yr).map(|(a, b)| T::of(b.f() * (a.f() - dot))));
                }
                add_into(&mut grads[x.0], dx);
            }
            Op::MeanPool { x, groups, inner } => {
                let c = g.len() / groups;
                let scale = T::of(1.0 / *inner as f64);
                let mut dx = Vec::with_capacity(groups * inner * c);
                for b in 0..*groups {
                    for _ in 0..*inner {
                        dx.extend(g[b * c..(b + 1) * c].iter().map(|&v| v * scale));
                    }
                }
                add_into(&mut grads[x.0], dx);
            }
            Op::Dropout { x, mask } => {
                add_into(&mut grads[x.0], g.iter().zip(mask).map(|(&a, &m)| a * m).collect());
            }
            Op::Add { a, b } => {
                if self.ng(*b) {
                    add_into(&mut grads[b.0], g.clone());
                }
                if self.ng(*a) {
                    add_into(&mut grads[a.0], g);
                }
            }
            Op::AddBroadcast { a, b } => {
                if self.ng(*b) {
                    let m = self.nodes[b.0].value.len();
                    let mut db = vec![0.0f64; m];
                    for (i, v) in g.iter().enumerate() {
                        db[i % m] += v.f();
                    }
                    add_into(&mut grads[b.0], db.into_iter().map(T::of).collect());
                }
                if self.ng(*a) {
                    add_into(&mut grads[a.0], g);
                }
            }
            Op::Scale { x, c } => {
                add_into(&mut grads[x.0], g.iter().map(|&v| v * *c).collect());
            }
            Op::Reshape { x } => add_into(&mut grads[x.0], g),
            Op::Permute { x, axes } => {
                let mut inv = vec![0; axes.len()];
                for (i, &a) in axes.iter().enumerate() {
                    inv[a] = i;
                }
                let (dx, _) = permute_data(&g, &node.value.shape, &inv);
                add_into(&mut grads[x.0], dx);
            }
            Op::WeightedSum { x, w } => {
                add_into(&mut grads[x.0], w.iter().map(|&v| v * g[0]).collect());
            }
            Op::SumAll { x } => {
                let n = self.nodes[x.0].value.len();
                add_into(&mut grads[x.0], vec![g[0]; n]);
            }
            Op::Focal { x, labels, params, probs } => {
                let up = g[0].f();
                let dz = objective::focal_grad_from_probs(probs, labels, params);
                add_into(&mut grads[x.0], dz.into_iter().map(|v| T::of(v * up)).collect());
            }
        }
        Ok(())
    }
}

impl ParamStore<f32> {
    /// Fold queued batch statistics into the running averages.
    pub fn apply_bn_updates(&mut self, updates: &[BnUpdate], momentum: f64) {
        for u in updates {
            for (id, batch) in [(u.mean_id, &u.mean), (u.var_id, &u.var)] {
                let t = self.get_mut(id);
                for (r, &b) in t.data.iter_mut().zip(batch) {
                    *r = (momentum * *r as f64 + (1.0 - momentum) * b) as f32;
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn permute_round_trip() {
        let data: Vec<f64> = (0..24).map(|i| i as f64).collect();
        let (p, s) = permute_data(&data, &[2, 3, 4], &[2, 0, 1]);
        assert_eq!(s, vec![4, 2, 3]);
        assert_eq!(p[1], 4.0);
        let (back, s2) = permute_data(&p, &s, &[1, 2, 0]);
        assert_eq!(s2, vec![2, 3, 4]);
        assert_eq!(back, data);
    }

    #[test]
    fn linear_gradient_is_outer_product() {
        let mut store = ParamStore::<f64>::new();
        let w = store.add("w", Tensor::new(vec![3, 2], vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6]).unwrap(), true);
        let unused = store.add("u", Tensor::filled(&[2], 1.0), true);
        let mut g = Graph::new(false, 0, 0);
        let x = g.input(Tensor::new(vec![1, 3], vec![1.0, -2.0, 3.0]).unwrap());
        let wv = g.param(&store, w);
        let y = g.matmul(x, wv, false, false).unwrap();
        let loss = g.sum_all(y);
        let grads = g.backward(loss, &store).unwrap();
        assert_eq!(grads[w].data, vec![1.0, 1.0, -2.0, -2.0, 3.0, 3.0]);
        assert_eq!(grads[unused].data, vec![0.0, 0.0]);
        assert_eq!(g.backward(loss, &store).unwrap(), grads);
        assert!(matches!(g.backward(y, &store), Err(Error::NonScalarLoss(_))));
    }

    #[test]
    fn relu6_clamps() {
        let mut g = Graph::<f32>::default();
        let x = g.input(Tensor::new(vec![3], vec![7.3, -1.0, 2.5]).unwrap());
        let y = g.relu6(x);
        assert_eq!(g.value(y).data, vec![6.0, 0.0, 2.5]);
    }

    #[test]
    fn softmax_properties() {
        let mut g = Graph::<f64>::default();
        let x = g.input(Tensor::new(vec![3, 2], vec![1000.0, 0.0, 0.5, 0.5, -3.0, 2.0]).unwrap());
        let y = g.softmax(x).unwrap();
        let p = g.value(y).data.clone();
        assert!((p[0] - 1.0).abs() < 1e-12 && p[1] < 1e-300 + 1e-12);
        assert_eq!((p[2], p[3]), (0.5, 0.5));
        let x2 = g.input(Tensor::new(vec![1, 2], vec![-3.0 + 17.5, 2.0 + 17.5]).unwrap());
        let y2 = g.softmax(x2).unwrap();
        assert!((g.value(y2).data[0] - p[4]).abs() < 1e-7);
    }

    #[test]
    fn layer_norm_of_constant_is_shift() {
        let mut g = Graph::<f64>::default();
        let x = g.input(Tensor::filled(&[2, 4], 3.0));
        let ga = g.input(Tensor::filled(&[4], 2.0));
        let be = g.input(Tensor::filled(&[4], 0.5));
        let y = g.layer_norm(x, ga, be).unwrap();
        assert!(g.value(y).data.iter().all(|&v| v == 0.5));
    }

    #[test]
    fn dropout_rates() {
        let mut g = Graph::<f32>::new(true, 5, 1);
        let x = g.input(Tensor::filled(&[1_000_000], 1.0));
        let y = g.dropout(x, 0.3, 7);
        let zeros = g.value(y).data.iter().filter(|&&v| v == 0.0).count() as f64 / 1e6;
        assert!((zeros - 0.3).abs() < 0.003, "zero fraction {zeros}");
        assert!(g.value(y).data.iter().all(|&v| v == 0.0 || (v - 1.0 / 0.7).abs() < 1e-6));
        assert_eq!(g.dropout(x, 0.0, 7), x);
        let mut inf = Graph::<f32>::new(false, 5, 1);
        let xi = inf.input(Tensor::filled(&[10], 1.0));
        assert_eq!(inf.dropout(xi, 0.9, 7), xi);
    }

    #[test]
    fn pooling_matches_loop_oracle() {
        let mut r = Rng::new(4);
        let (h, w, c) = (7, 7, 1280);
        let data: Vec<f64> = (0..h * w * c).map(|_| r.range(-1.0, 1.0)).collect();
        let mut g = Graph::<f64>::default();
        let x = g.input(Tensor::new(vec![1, h, w, c], data.clone()).unwrap());
        let y = g.global_avg_pool(x).unwrap();
        assert_eq!(g.shape(y), &[1, c]);
        for ch in 0..c {
            let mut s = 0.0;
            for i in 0..h * w {
                s += data[i * c + ch];
            }
            assert!((g.value(y).data[ch] - s / 49.0).abs() < 1e-12);
        }
    }
}
