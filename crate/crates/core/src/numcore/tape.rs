//! Reverse-mode differentiation over a linear record of tensor operations.
//!
//! A [`Tape`] owns every intermediate value. Operations append a node and
//! return a [`Var`] handle; [`Tape::backward`] walks the nodes from the loss
//! back to the first one in strict reverse creation order.

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};

use super::conv::{self, ConvBackend, ConvGeometry};
use super::linalg::gemm;
use super::param::{Param, ParamId};
use super::tensor::{advance_index, numel, strides, Tensor};
use crate::error::{invalid, shape_err, Error, Result};

static NEXT_TAPE: AtomicU64 = AtomicU64::new(1);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var {
    id: usize,
    tape: u64,
}

impl Var {
    pub fn index(&self) -> usize {
        self.id
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    AddBias(usize, usize),
    MulBias(usize, usize),
    Scale(usize, f64),
    AddScalar(usize),
    Tanh(usize),
    Gelu(usize),
    Exp(usize),
    MatmulLast(usize, usize),
    BatchMatmul {
        a: usize,
        b: usize,
        transpose_b: bool,
        alpha: f64,
    },
    Softmax(usize),
    LayerNorm {
        x: usize,
        inv_std: Vec<f64>,
    },
    Reshape(usize),
    Permute(usize, Vec<usize>),
    SliceLast {
        x: usize,
        start: usize,
    },
    ConcatLast(Vec<usize>),
    SumAll(usize),
    SumAxis(usize, usize),
    Conv {
        u: usize,
        h: usize,
        backend: ConvBackend,
    },
    ChannelOuter(Vec<usize>),
    Rotate {
        x: usize,
        axis: usize,
        quarter_turns: usize,
    },
    Flip(usize, Vec<usize>),
    CrossEntropy {
        logits: usize,
        labels: Vec<usize>,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    requires_grad: bool,
    op: Op,
}

/// Gradients of a scalar with respect to the tape's differentiable leaves.
#[derive(Debug)]
pub struct Gradients {
    tape: u64,
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        if v.tape != self.tape {
            return None;
        }
        self.grads.get(v.id).and_then(Option::as_ref)
    }
}

#[derive(Debug)]
pub struct Tape {
    id: u64,
    nodes: Vec<Node>,
    params: HashMap<ParamId, Var>,
    grad_enabled: bool,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            id: NEXT_TAPE.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
            params: HashMap::new(),
            grad_enabled: true,
        }
    }

    /// A tape that records values only; parameters enter as constants.
    pub fn inference() -> Self {
        Tape {
            grad_enabled: false,
            ..Self::new()
        }
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

    fn check(&self, v: Var) -> usize {
        assert_eq!(v.tape, self.id, "variable belongs to a different tape");
        v.id
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[self.check(v)].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.value(v).shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[self.check(v)].requires_grad
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[usize], what: &'static str) -> Result<Var> {
        value.ensure_finite(what)?;
        let requires_grad = inputs.iter().any(|&i| self.nodes[i].requires_grad);
        let id = self.nodes.len();
        self.nodes.push(Node {
            value,
            requires_grad,
            op,
        });
        Ok(Var { id, tape: self.id })
    }

    fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        let id = self.nodes.len();
        self.nodes.push(Node {
            value,
            requires_grad: requires_grad && self.grad_enabled,
            op: Op::Leaf,
        });
        Var { id, tape: self.id }
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn variable(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    /// Binds a parameter, reusing the existing leaf if it was already bound.
    pub fn param(&mut self, p: &Param) -> Var {
        if let Some(&v) = self.params.get(&p.id()) {
            return v;
        }
        let v = self.leaf(p.value.clone(), true);
        self.params.insert(p.id(), v);
        v
    }

    pub fn param_var(&self, p: &Param) -> Option<Var> {
        self.params.get(&p.id()).copied()
    }

    fn val(&self, i: usize) -> &Tensor {
        &self.nodes[i].value
    }

    // ---------------------------------------------------------------------
    // elementwise
    // ---------------------------------------------------------------------

    fn same_shape(&self, a: usize, b: usize, what: &str) -> Result<()> {
        if self.val(a).shape() != self.val(b).shape() {
            return Err(shape_err(format!(
                "{what}: {:?} vs {:?}",
                self.val(a).shape(),
                self.val(b).shape()
            )));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (a, b) = (self.check(a), self.check(b));
        self.same_shape(a, b, "add")?;
        let y = self.val(a).zip_map(self.val(b), |x, y| x + y)?;
        self.push(y, Op::Add(a, b), &[a, b], "add")
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (a, b) = (self.check(a), self.check(b));
        self.same_shape(a, b, "sub")?;
        let y = self.val(a).zip_map(self.val(b), |x, y| x - y)?;
        self.push(y, Op::Sub(a, b), &[a, b], "sub")
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (a, b) = (self.check(a), self.check(b));
        self.same_shape(a, b, "mul")?;
        let y = self.val(a).zip_map(self.val(b), |x, y| x * y)?;
        self.push(y, Op::Mul(a, b), &[a, b], "mul")
    }

    fn last_axis_operand(&self, x: usize, v: usize, what: &str) -> Result<usize> {
        let xs = self.val(x).shape();
        let vs = self.val(v).shape();
        let d = *xs.last().unwrap();
        if vs != [d] {
            return Err(shape_err(format!("{what}: vector {vs:?} against last axis of {xs:?}")));
        }
        Ok(d)
    }

    /// `x + b` with `b` broadcast along the last axis.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let (x, b) = (self.check(x), self.check(b));
        let d = self.last_axis_operand(x, b, "add_bias")?;
        let bv = self.val(b).data();
        let mut out = self.val(x).to_vec();
        for row in out.chunks_mut(d) {
            for (o, &bb) in row.iter_mut().zip(bv) {
                *o += bb;
            }
        }
        let y = Tensor::from_parts(self.val(x).shape().to_vec(), out);
        self.push(y, Op::AddBias(x, b), &[x, b], "add_bias")
    }

    /// `x ⊙ s` with `s` broadcast along the last axis.
    pub fn mul_bias(&mut self, x: Var, s: Var) -> Result<Var> {
        let (x, s) = (self.check(x), self.check(s));
        let d = self.last_axis_operand(x, s, "mul_bias")?;
        let sv = self.val(s).data();
        let mut out = self.val(x).to_vec();
        for row in out.chunks_mut(d) {
            for (o, &ss) in row.iter_mut().zip(sv) {
                *o *= ss;
            }
        }
        let y = Tensor::from_parts(self.val(x).shape().to_vec(), out);
        self.push(y, Op::MulBias(x, s), &[x, s], "mul_bias")
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Result<Var> {
        let x = self.check(x);
        let y = self.val(x).map(|v| v * c);
        self.push(y, Op::Scale(x, c), &[x], "scale")
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Result<Var> {
        let x = self.check(x);
        let y = self.val(x).map(|v| v + c);
        self.push(y, Op::AddScalar(x), &[x], "add_scalar")
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        let x = self.check(x);
        let y = self.val(x).map(f64::tanh);
        self.push(y, Op::Tanh(x), &[x], "tanh")
    }

    pub fn gelu(&mut self, x: Var) -> Result<Var> {
        let x = self.check(x);
        let y = self.val(x).map(|v| gelu(v).0);
        self.push(y, Op::Gelu(x), &[x], "gelu")
    }

    pub fn exp(&mut self, x: Var) -> Result<Var> {
        let x = self.check(x);
        let y = self.val(x).map(f64::exp);
        self.push(y, Op::Exp(x), &[x], "exp")
    }

    // ---------------------------------------------------------------------
    // products
    // ---------------------------------------------------------------------

    /// `x · w` contracting the last axis of `x` with the rows of `w: (K, N)`.
    pub fn matmul_last(&mut self, x: Var, w: Var) -> Result<Var> {
        let (x, w) = (self.check(x), self.check(w));
        let xs = self.val(x).shape().to_vec();
        let ws = self.val(w).shape();
        let k = *xs.last().unwrap();
        if ws.len() != 2 || ws[0] != k {
            return Err(shape_err(format!("matmul_last: {xs:?} times {ws:?}")));
        }
        let n = ws[1];
        let rows = self.val(x).len() / k;
        let mut out = vec![0.0; rows * n];
        gemm(
            rows,
            k,
            n,
            1.0,
            self.val(x).data(),
            false,
            self.val(w).data(),
            false,
            0.0,
            &mut out,
        );
        let mut shape = xs;
        *shape.last_mut().unwrap() = n;
        self.push(Tensor::from_parts(shape, out), Op::MatmulLast(x, w), &[x, w], "matmul")
    }

    /// Batched `alpha · a · b` (or `alpha · a · bᵀ`) over matching leading axes.
    pub fn batch_matmul(&mut self, a: Var, b: Var, transpose_b: bool, alpha: f64) -> Result<Var> {
        let (a, b) = (self.check(a), self.check(b));
        let (g, m, k, n) = bmm_dims(self.val(a).shape(), self.val(b).shape(), transpose_b)?;
        let av = self.val(a).data();
        let bv = self.val(b).data();
        let mut out = vec![0.0; g * m * n];
        for i in 0..g {
            gemm(
                m,
                k,
                n,
                alpha,
                &av[i * m * k..(i + 1) * m * k],
                false,
                &bv[i * k * n..(i + 1) * k * n],
                transpose_b,
                0.0,
                &mut out[i * m * n..(i + 1) * m * n],
            );
        }
        let mut shape = self.val(a).shape().to_vec();
        *shape.last_mut().unwrap() = n;
        self.push(
            Tensor::from_parts(shape, out),
            Op::BatchMatmul {
                a,
                b,
                transpose_b,
                alpha,
            },
            &[a, b],
            "batch_matmul",
        )
    }

    // ---------------------------------------------------------------------
    // normalizations
    // ---------------------------------------------------------------------

    pub fn softmax_last(&mut self, x: Var) -> Result<Var> {
        let x = self.check(x);
        let d = *self.val(x).shape().last().unwrap();
        let mut out = self.val(x).to_vec();
        for row in out.chunks_mut(d) {
            let m = row.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
            let mut s = 0.0;
            for v in row.iter_mut() {
                *v = (*v - m).exp();
                s += *v;
            }
            for v in row.iter_mut() {
                *v /= s;
            }
        }
        let y = Tensor::from_parts(self.val(x).shape().to_vec(), out);
        self.push(y, Op::Softmax(x), &[x], "softmax")
    }

    /// Zero-mean, unit-variance normalization over the last axis (no affine part).
    pub fn layer_norm(&mut self, x: Var, eps: f64) -> Result<Var> {
        let x = self.check(x);
        let d = *self.val(x).shape().last().unwrap();
        let mut out = self.val(x).to_vec();
        let mut inv_std = Vec::with_capacity(out.len() / d);
        for row in out.chunks_mut(d) {
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let r = 1.0 / (var + eps).sqrt();
            for v in row.iter_mut() {
                *v = (*v - mean) * r;
            }
            inv_std.push(r);
        }
        let y = Tensor::from_parts(self.val(x).shape().to_vec(), out);
        self.push(y, Op::LayerNorm { x, inv_std }, &[x], "layer_norm")
    }

    // ---------------------------------------------------------------------
    // layout
    // ---------------------------------------------------------------------

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let x = self.check(x);
        let y = self.val(x).reshape(shape)?;
        self.push(y, Op::Reshape(x), &[x], "reshape")
    }

    pub fn permute(&mut self, x: Var, perm: &[usize]) -> Result<Var> {
        let x = self.check(x);
        let y = self.val(x).permute(perm)?;
        self.push(y, Op::Permute(x, perm.to_vec()), &[x], "permute")
    }

    pub fn slice_last(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let x = self.check(x);
        let xs = self.val(x).shape().to_vec();
        let d = *xs.last().unwrap();
        if len == 0 || start + len > d {
            return Err(shape_err(format!("slice {start}..{} of last axis {d}", start + len)));
        }
        let out: Vec<f64> = self
            .val(x)
            .data()
            .chunks(d)
            .flat_map(|row| row[start..start + len].iter().copied())
            .collect();
        let mut shape = xs;
        *shape.last_mut().unwrap() = len;
        self.push(
            Tensor::from_parts(shape, out),
            Op::SliceLast { x, start },
            &[x],
            "slice",
        )
    }

    pub fn concat_last(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::Empty("concat_last inputs"));
        }
        let ids: Vec<usize> = parts.iter().map(|&p| self.check(p)).collect();
        let lead = self.val(ids[0]).shape()[..self.val(ids[0]).ndim() - 1].to_vec();
        let mut widths = Vec::new();
        for &i in &ids {
            let s = self.val(i).shape();
            if s[..s.len() - 1] != lead[..] {
                return Err(shape_err(format!("concat_last: {s:?} vs leading {lead:?}")));
            }
            widths.push(*s.last().unwrap());
        }
        let total: usize = widths.iter().sum();
        let rows = numel(&lead);
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (&i, &w) in ids.iter().zip(&widths) {
                out.extend_from_slice(&self.val(i).data()[r * w..(r + 1) * w]);
            }
        }
        let mut shape = lead;
        shape.push(total);
        self.push(
            Tensor::from_parts(shape, out),
            Op::ConcatLast(ids.clone()),
            &ids,
            "concat",
        )
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let x = self.check(x);
        let y = Tensor::scalar(self.val(x).sum());
        self.push(y, Op::SumAll(x), &[x], "sum")
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let n = self.value(x).len() as f64;
        let s = self.sum(x)?;
        self.scale(s, 1.0 / n)
    }

    /// Sums out one axis. A rank-1 input collapses to shape `[1]`.
    pub fn sum_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let x = self.check(x);
        let xs = self.val(x).shape().to_vec();
        if axis >= xs.len() {
            return Err(shape_err(format!("sum_axis {axis} on {xs:?}")));
        }
        let outer: usize = xs[..axis].iter().product();
        let n = xs[axis];
        let inner: usize = xs[axis + 1..].iter().product();
        let src = self.val(x).data();
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for k in 0..n {
                let base = (o * n + k) * inner;
                for i in 0..inner {
                    out[o * inner + i] += src[base + i];
                }
            }
        }
        let mut shape: Vec<usize> = xs
            .iter()
            .enumerate()
            .filter(|&(a, _)| a != axis)
            .map(|(_, &d)| d)
            .collect();
        if shape.is_empty() {
            shape.push(1);
        }
        self.push(Tensor::from_parts(shape, out), Op::SumAxis(x, axis), &[x], "sum_axis")
    }

    pub fn mean_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let n = self.value(x).shape().get(axis).copied().unwrap_or(1) as f64;
        let s = self.sum_axis(x, axis)?;
        self.scale(s, 1.0 / n)
    }

    // ---------------------------------------------------------------------
    // convolution and kernel construction
    // ---------------------------------------------------------------------

    /// Depthwise quadrant-causal convolution of `u: (B, L_1..L_N, C)` with
    /// per-channel kernels `h: (C, K_1..K_N)`.
    pub fn causal_conv(&mut self, u: Var, h: Var, backend: ConvBackend) -> Result<Var> {
        let (u, h) = (self.check(u), self.check(h));
        let geo = ConvGeometry::new(self.val(u).shape(), self.val(h).shape(), backend)?;
        let y = match backend {
            ConvBackend::Fft => conv::forward_fft(self.val(u).data(), self.val(h).data(), &geo),
            ConvBackend::Direct => conv::forward_direct(self.val(u).data(), self.val(h).data(), &geo),
        };
        let y = Tensor::from_parts(self.val(u).shape().to_vec(), y);
        self.push(y, Op::Conv { u, h, backend }, &[u, h], "causal convolution")
    }

    /// Per-channel outer product of factors `(C, L_n)` into `(C, L_1..L_N)`.
    pub fn channel_outer(&mut self, factors: &[Var]) -> Result<Var> {
        if factors.is_empty() {
            return Err(Error::Empty("outer product factors"));
        }
        let ids: Vec<usize> = factors.iter().map(|&f| self.check(f)).collect();
        let c = self.val(ids[0]).shape()[0];
        let mut shape = vec![c];
        for &i in &ids {
            let s = self.val(i).shape();
            if s.len() != 2 || s[0] != c {
                return Err(shape_err(format!("outer factor {s:?} with {c} channels")));
            }
            shape.push(s[1]);
        }
        let vals: Vec<&[f64]> = ids.iter().map(|&i| self.val(i).data()).collect();
        let lens = &shape[1..];
        let per = numel(lens);
        let mut out = Vec::with_capacity(c * per);
        for ch in 0..c {
            let mut idx = vec![0; lens.len()];
            for _ in 0..per {
                let mut p = 1.0;
                for (n, &ix) in idx.iter().enumerate() {
                    p *= vals[n][ch * lens[n] + ix];
                }
                out.push(p);
                advance_index(&mut idx, lens);
            }
        }
        self.push(
            Tensor::from_parts(shape, out),
            Op::ChannelOuter(ids.clone()),
            &ids,
            "outer product",
        )
    }

    // ---------------------------------------------------------------------
    // grid transforms
    // ---------------------------------------------------------------------

    /// Rotates axes `(axis, axis + 1)` clockwise by `quarter_turns · 90°`.
    pub fn rotate(&mut self, x: Var, axis: usize, quarter_turns: usize) -> Result<Var> {
        let x = self.check(x);
        let y = rotate_axes(self.val(x), axis, quarter_turns)?;
        self.push(
            y,
            Op::Rotate {
                x,
                axis,
                quarter_turns: quarter_turns % 4,
            },
            &[x],
            "rotate",
        )
    }

    /// Reverses the listed axes.
    pub fn flip(&mut self, x: Var, axes: &[usize]) -> Result<Var> {
        let x = self.check(x);
        let y = flip_axes(self.val(x), axes)?;
        self.push(y, Op::Flip(x, axes.to_vec()), &[x], "flip")
    }

    // ---------------------------------------------------------------------
    // losses
    // ---------------------------------------------------------------------

    /// Mean softmax cross-entropy of `logits: (B, K)` against integer labels.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let l = self.check(logits);
        let s = self.val(l).shape();
        if s.len() != 2 || s[0] != labels.len() {
            return Err(shape_err(format!(
                "cross_entropy: logits {s:?}, {} labels",
                labels.len()
            )));
        }
        let k = s[1];
        if let Some(&bad) = labels.iter().find(|&&y| y >= k) {
            return Err(invalid(format!("label {bad} out of range for {k} classes")));
        }
        let mut total = 0.0;
        for (row, &y) in self.val(l).data().chunks(k).zip(labels) {
            let m = row.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
            let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
            total += lse - row[y];
        }
        let y = Tensor::scalar(total / labels.len() as f64);
        self.push(
            y,
            Op::CrossEntropy {
                logits: l,
                labels: labels.to_vec(),
            },
            &[l],
            "cross_entropy",
        )
    }

    // ---------------------------------------------------------------------
    // reverse pass
    // ---------------------------------------------------------------------

    /// Reverse sweep from a single-element `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if loss.tape != self.id {
            return Err(Error::Detached);
        }
        let root = &self.nodes[loss.id];
        if root.value.len() != 1 {
            return Err(Error::NotScalar(root.value.shape().to_vec()));
        }
        if !root.requires_grad {
            return Err(Error::Detached);
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.id + 1];
        grads[loss.id] = Some(Tensor::full(root.value.shape(), 1.0));
        for id in (0..=loss.id).rev() {
            let node = &self.nodes[id];
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            self.backprop(id, &g, &mut |input, contrib| {
                if !self.nodes[input].requires_grad {
                    return;
                }
                accumulate(&mut grads[input], contrib);
            })?;
        }
        Ok(Gradients { tape: self.id, grads })
    }

    /// Gradients of `loss` for each of `wrt`; variables off the path get zeros.
    pub fn gradients(&self, loss: Var, wrt: &[Var]) -> Result<Vec<Tensor>> {
        let g = self.backward(loss)?;
        Ok(wrt
            .iter()
            .map(|&v| {
                g.get(v)
                    .cloned()
                    .unwrap_or_else(|| Tensor::zeros(self.value(v).shape()))
            })
            .collect())
    }

    /// Gradient for each parameter, zeros for parameters never bound.
    pub fn param_gradients(&self, grads: &Gradients, params: &[&Param]) -> Vec<Tensor> {
        params
            .iter()
            .map(|p| {
                self.param_var(p)
                    .and_then(|v| grads.get(v).cloned())
                    .unwrap_or_else(|| Tensor::zeros(p.value.shape()))
            })
            .collect()
    }

    fn backprop(&self, id: usize, g: &Tensor, emit: &mut dyn FnMut(usize, Tensor)) -> Result<()> {
        let node = &self.nodes[id];
        let y = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                emit(*a, g.clone());
                emit(*b, g.clone());
            }
            Op::Sub(a, b) => {
                emit(*a, g.clone());
                emit(*b, g.map(|v| -v));
            }
            Op::Mul(a, b) => {
                emit(*a, g.zip_map(self.val(*b), |g, b| g * b)?);
                emit(*b, g.zip_map(self.val(*a), |g, a| g * a)?);
            }
            Op::AddBias(x, b) => {
                let d = self.val(*b).len();
                let mut gb = vec![0.0; d];
                for row in g.data().chunks(d) {
                    for (acc, &v) in gb.iter_mut().zip(row) {
                        *acc += v;
                    }
                }
                emit(*x, g.clone());
                emit(*b, Tensor::from_parts(vec![d], gb));
            }
            Op::MulBias(x, s) => {
                let sv = self.val(*s).data();
                let d = sv.len();
                let mut gx = g.to_vec();
                let mut gs = vec![0.0; d];
                for (grow, xrow) in gx.chunks_mut(d).zip(self.val(*x).data().chunks(d)) {
                    for j in 0..d {
                        gs[j] += grow[j] * xrow[j];
                        grow[j] *= sv[j];
                    }
                }
                emit(*x, Tensor::from_parts(g.shape().to_vec(), gx));
                emit(*s, Tensor::from_parts(vec![d], gs));
            }
            Op::Scale(x, c) => emit(*x, g.map(|v| v * c)),
            Op::AddScalar(x) => emit(*x, g.clone()),
            Op::Tanh(x) => emit(*x, g.zip_map(y, |g, t| g * (1.0 - t * t))?),
            Op::Gelu(x) => emit(*x, g.zip_map(self.val(*x), |g, v| g * gelu(v).1)?),
            Op::Exp(x) => emit(*x, g.zip_map(y, |g, e| g * e)?),
            Op::MatmulLast(x, w) => {
                let xv = self.val(*x);
                let wv = self.val(*w);
                let (k, n) = (wv.shape()[0], wv.shape()[1]);
                let rows = xv.len() / k;
                let mut gx = vec![0.0; rows * k];
                gemm(rows, n, k, 1.0, g.data(), false, wv.data(), true, 0.0, &mut gx);
                let mut gw = vec![0.0; k * n];
                gemm(k, rows, n, 1.0, xv.data(), true, g.data(), false, 0.0, &mut gw);
                emit(*x, Tensor::from_parts(xv.shape().to_vec(), gx));
                emit(*w, Tensor::from_parts(vec![k, n], gw));
            }
            Op::BatchMatmul {
                a,
                b,
                transpose_b,
                alpha,
            } => {
                let av = self.val(*a);
                let bv = self.val(*b);
                let (bs, m, k, n) = bmm_dims(av.shape(), bv.shape(), *transpose_b)?;
                let mut ga = vec![0.0; bs * m * k];
                let mut gb = vec![0.0; bs * k * n];
                for i in 0..bs {
                    let gi = &g.data()[i * m * n..(i + 1) * m * n];
                    let ai = &av.data()[i * m * k..(i + 1) * m * k];
                    let bi = &bv.data()[i * k * n..(i + 1) * k * n];
                    let ga_i = &mut ga[i * m * k..(i + 1) * m * k];
                    let gb_i = &mut gb[i * k * n..(i + 1) * k * n];
                    if *transpose_b {
                        // y = a bᵀ with b stored (n, k)
                        gemm(m, n, k, *alpha, gi, false, bi, false, 0.0, ga_i);
                        gemm(n, m, k, *alpha, gi, true, ai, false, 0.0, gb_i);
                    } else {
                        gemm(m, n, k, *alpha, gi, false, bi, true, 0.0, ga_i);
                        gemm(k, m, n, *alpha, ai, true, gi, false, 0.0, gb_i);
                    }
                }
                emit(*a, Tensor::from_parts(av.shape().to_vec(), ga));
                emit(*b, Tensor::from_parts(bv.shape().to_vec(), gb));
            }
            Op::Softmax(x) => {
                let d = *y.shape().last().unwrap();
                let mut gx = vec![0.0; y.len()];
                for ((go, gr), yr) in gx.chunks_mut(d).zip(g.data().chunks(d)).zip(y.data().chunks(d)) {
                    let dot: f64 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                    for j in 0..d {
                        go[j] = yr[j] * (gr[j] - dot);
                    }
                }
                emit(*x, Tensor::from_parts(y.shape().to_vec(), gx));
            }
            Op::LayerNorm { x, inv_std } => {
                let d = *y.shape().last().unwrap();
                let df = d as f64;
                let mut gx = vec![0.0; y.len()];
                for (((go, gr), yr), &r) in gx
                    .chunks_mut(d)
                    .zip(g.data().chunks(d))
                    .zip(y.data().chunks(d))
                    .zip(inv_std)
                {
                    let sg: f64 = gr.iter().sum();
                    let sgy: f64 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                    for j in 0..d {
                        go[j] = r / df * (df * gr[j] - sg - yr[j] * sgy);
                    }
                }
                emit(*x, Tensor::from_parts(y.shape().to_vec(), gx));
            }
            Op::Reshape(x) => emit(*x, g.reshape(self.val(*x).shape())?),
            Op::Permute(x, perm) => {
                let mut inv = vec![0; perm.len()];
                for (i, &p) in perm.iter().enumerate() {
                    inv[p] = i;
                }
                emit(*x, g.permute(&inv)?);
            }
            Op::SliceLast { x, start } => {
                let xs = self.val(*x).shape();
                let d = *xs.last().unwrap();
                let len = *y.shape().last().unwrap();
                let mut gx = vec![0.0; self.val(*x).len()];
                for (row, grow) in gx.chunks_mut(d).zip(g.data().chunks(len)) {
                    row[*start..start + len].copy_from_slice(grow);
                }
                emit(*x, Tensor::from_parts(xs.to_vec(), gx));
            }
            Op::ConcatLast(ids) => {
                let total = *y.shape().last().unwrap();
                let mut offset = 0;
                for &i in ids {
                    let s = self.val(i).shape();
                    let w = *s.last().unwrap();
                    let gi: Vec<f64> = g
                        .data()
                        .chunks(total)
                        .flat_map(|row| row[offset..offset + w].iter().copied())
                        .collect();
                    emit(i, Tensor::from_parts(s.to_vec(), gi));
                    offset += w;
                }
            }
            Op::SumAll(x) => {
                let gv = g.data()[0];
                emit(*x, Tensor::full(self.val(*x).shape(), gv));
            }
            Op::SumAxis(x, axis) => {
                let xs = self.val(*x).shape();
                let outer: usize = xs[..*axis].iter().product();
                let n = xs[*axis];
                let inner: usize = xs[axis + 1..].iter().product();
                let mut gx = vec![0.0; self.val(*x).len()];
                for o in 0..outer {
                    for k in 0..n {
                        let base = (o * n + k) * inner;
                        gx[base..base + inner].copy_from_slice(&g.data()[o * inner..(o + 1) * inner]);
                    }
                }
                emit(*x, Tensor::from_parts(xs.to_vec(), gx));
            }
            Op::Conv { u, h, backend } => {
                let uv = self.val(*u);
                let hv = self.val(*h);
                let geo = ConvGeometry::new(uv.shape(), hv.shape(), *backend)?;
                let (gu, gh) = match backend {
                    ConvBackend::Fft => conv::backward_fft(g.data(), uv.data(), hv.data(), &geo),
                    ConvBackend::Direct => conv::backward_direct(g.data(), uv.data(), hv.data(), &geo),
                };
                emit(*u, Tensor::from_parts(uv.shape().to_vec(), gu));
                emit(*h, Tensor::from_parts(hv.shape().to_vec(), gh));
            }
            Op::ChannelOuter(ids) => {
                let shape = y.shape();
                let c = shape[0];
                let lens = &shape[1..];
                let per = numel(lens);
                let vals: Vec<&[f64]> = ids.iter().map(|&i| self.val(i).data()).collect();
                let mut gf: Vec<Vec<f64>> = lens.iter().map(|&l| vec![0.0; c * l]).collect();
                for ch in 0..c {
                    let mut idx = vec![0; lens.len()];
                    for p in 0..per {
                        let gv = g.data()[ch * per + p];
                        for n in 0..lens.len() {
                            let mut prod = gv;
                            for (m, &ix) in idx.iter().enumerate() {
                                if m != n {
                                    prod *= vals[m][ch * lens[m] + ix];
                                }
                            }
                            gf[n][ch * lens[n] + idx[n]] += prod;
                        }
                        advance_index(&mut idx, lens);
                    }
                }
                for ((&i, grad), &l) in ids.iter().zip(gf).zip(lens) {
                    emit(i, Tensor::from_parts(vec![c, l], grad));
                }
            }
            Op::Rotate { x, axis, quarter_turns } => emit(*x, rotate_axes(g, *axis, (4 - quarter_turns) % 4)?),
            Op::Flip(x, axes) => emit(*x, flip_axes(g, axes)?),
            Op::CrossEntropy { logits, labels } => {
                let lv = self.val(*logits);
                let k = lv.shape()[1];
                let scale = g.data()[0] / labels.len() as f64;
                let mut gl = vec![0.0; lv.len()];
                for ((go, row), &lab) in gl.chunks_mut(k).zip(lv.data().chunks(k)).zip(labels) {
                    let m = row.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
                    let s: f64 = row.iter().map(|v| (v - m).exp()).sum();
                    for j in 0..k {
                        go[j] = (row[j] - m).exp() / s * scale;
                    }
                    go[lab] -= scale;
                }
                emit(*logits, Tensor::from_parts(lv.shape().to_vec(), gl));
            }
        }
        Ok(())
    }
}

fn accumulate(slot: &mut Option<Tensor>, contrib: Tensor) {
    match slot {
        Some(existing) => {
            for (a, b) in existing.data_mut().iter_mut().zip(contrib.data()) {
                *a += b;
            }
        }
        None => *slot = Some(contrib),
    }
}

fn bmm_dims(a: &[usize], b: &[usize], transpose_b: bool) -> Result<(usize, usize, usize, usize)> {
    if a.len() < 3 || a.len() != b.len() || a[..a.len() - 2] != b[..b.len() - 2] {
        return Err(shape_err(format!("batch_matmul: {a:?} with {b:?}")));
    }
    let r = a.len();
    let g = numel(&a[..r - 2]);
    let (m, k) = (a[r - 2], a[r - 1]);
    let (bk, n) = if transpose_b {
        (b[r - 1], b[r - 2])
    } else {
        (b[r - 2], b[r - 1])
    };
    if bk != k {
        return Err(shape_err(format!("batch_matmul inner dims: {a:?} with {b:?}")));
    }
    Ok((g, m, k, n))
}

/// tanh-form GELU and its derivative.
fn gelu(x: f64) -> (f64, f64) {
    const C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
    const A: f64 = 0.044_715;
    let inner = C * (x + A * x * x * x);
    let t = inner.tanh();
    let y = 0.5 * x * (1.0 + t);
    let dy = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * C * (1.0 + 3.0 * A * x * x);
    (y, dy)
}

pub(crate) fn rotate_axes(t: &Tensor, axis: usize, quarter_turns: usize) -> Result<Tensor> {
    let s = t.shape();
    if axis + 1 >= s.len() {
        return Err(shape_err(format!("rotate axes ({axis}, {}) of {s:?}", axis + 1)));
    }
    let k = quarter_turns % 4;
    let (h, w) = (s[axis], s[axis + 1]);
    if k % 2 == 1 && h != w {
        return Err(invalid(format!("quarter turn of a non-square {h}x{w} grid")));
    }
    if k == 0 {
        return Ok(t.clone());
    }
    let mut out_shape = s.to_vec();
    if k % 2 == 1 {
        out_shape.swap(axis, axis + 1);
    }
    let in_strides = strides(s);
    let mut idx = vec![0; s.len()];
    let mut out = Vec::with_capacity(t.len());
    for _ in 0..t.len() {
        let (i, j) = (idx[axis], idx[axis + 1]);
        let (si, sj) = match k {
            1 => (h - 1 - j, i),
            2 => (h - 1 - i, w - 1 - j),
            _ => (j, w - 1 - i),
        };
        let mut off = 0;
        for (a, (&ix, &st)) in idx.iter().zip(&in_strides).enumerate() {
            let v = if a == axis {
                si
            } else if a == axis + 1 {
                sj
            } else {
                ix
            };
            off += v * st;
        }
        out.push(t.data()[off]);
        advance_index(&mut idx, &out_shape);
    }
    Ok(Tensor::from_parts(out_shape, out))
}

pub(crate) fn flip_axes(t: &Tensor, axes: &[usize]) -> Result<Tensor> {
    let s = t.shape();
    let mut flip = vec![false; s.len()];
    for &a in axes {
        if a >= s.len() {
            return Err(shape_err(format!("flip axis {a} of {s:?}")));
        }
        flip[a] = true;
    }
    let st = strides(s);
    let mut idx = vec![0; s.len()];
    let mut out = Vec::with_capacity(t.len());
    for _ in 0..t.len() {
        let off: usize = idx
            .iter()
            .enumerate()
            .map(|(a, &i)| if flip[a] { (s[a] - 1 - i) * st[a] } else { i * st[a] })
            .sum();
        out.push(t.data()[off]);
        advance_index(&mut idx, s);
    }
    Ok(Tensor::from_parts(s.to_vec(), out))
}
