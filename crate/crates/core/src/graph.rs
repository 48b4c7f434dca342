//! Reverse-mode differentiation tape.
//!
//! Every primitive appends a node holding its value and whatever it needs for
//! the backward pass. Nodes are stored in creation order, which is already a
//! topological order, so `backward` walks the tape once from the loss down.

use rustfft::num_complex::Complex;

use crate::error::{Error, Result};
use crate::kernels::{self, ConvGeom};
use crate::ssm::kernel as scan_kernel;
use crate::ssm::kernel::ScanDims;
use crate::tensor::{Scalar, Tensor};

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

/// Sentinel in gather index maps that produces a zero element.
pub(crate) const GATHER_ZERO: usize = usize::MAX;

pub(crate) enum Op<S> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Affine(Var, S),
    Abs(Var),
    Sigmoid(Var),
    Silu(Var),
    Softplus(Var),
    Exp(Var),
    ChannelMul(Var, Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<S>,
        rstd: Vec<S>,
    },
    Conv2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        geo: ConvGeom,
    },
    Linear {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    Concat(Vec<Var>),
    Narrow {
        x: Var,
        start: usize,
    },
    Gather {
        x: Var,
        index: Vec<usize>,
    },
    Reshape(Var),
    Sum(Var),
    Mean(Var),
    AvgPool(Var),
    Fft2(Var),
    Scan {
        x: Var,
        delta: Var,
        a: Var,
        b: Var,
        c: Var,
        d: Var,
        dims: ScanDims,
        states: Vec<S>,
        decays: Vec<S>,
    },
}

pub(crate) struct Node<S> {
    pub(crate) value: Tensor<S>,
    pub(crate) op: Op<S>,
    pub(crate) requires_grad: bool,
}

/// A differentiation tape plus the gradient store of its leaves.
pub struct Graph<S: Scalar = f32> {
    pub(crate) nodes: Vec<Node<S>>,
    grads: Vec<Option<Tensor<S>>>,
}

impl<S: Scalar> Default for Graph<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> Graph<S> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            grads: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Trainable leaf: receives a gradient on `backward`.
    pub fn param(&mut self, value: Tensor<S>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Detached leaf: never receives a gradient.
    pub fn constant(&mut self, value: Tensor<S>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<S> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Accumulated gradient of a trainable leaf.
    pub fn grad(&self, v: Var) -> Option<&Tensor<S>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn zero_grad(&mut self) {
        self.grads.clear();
    }

    pub(crate) fn push(&mut self, value: Tensor<S>, op: Op<S>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub(crate) fn any_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Back-propagates from a single-element `loss`, adding into the leaf gradients.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let node = self
            .nodes
            .get(loss.0)
            .ok_or_else(|| Error::Tape(format!("node {} is not on this tape", loss.0)))?;
        if node.value.numel() != 1 {
            return Err(Error::Tape(format!(
                "backward needs a single-element loss, got shape {:?}",
                node.value.shape()
            )));
        }
        if !node.requires_grad {
            return Err(Error::Tape("loss is detached from every trainable leaf".into()));
        }

        let mut local: Vec<Option<Tensor<S>>> = Vec::new();
        local.resize_with(loss.0 + 1, || None);
        local[loss.0] = Some(Tensor::full(node.value.shape(), S::one()));

        if self.grads.len() < self.nodes.len() {
            self.grads.resize_with(self.nodes.len(), || None);
        }

        for id in (0..=loss.0).rev() {
            let Some(grad) = local[id].take() else {
                continue;
            };
            let node = &self.nodes[id];
            if !node.requires_grad {
                continue;
            }
            if let Op::Leaf = node.op {
                match &mut self.grads[id] {
                    Some(acc) => acc.add_assign(&grad),
                    slot @ None => *slot = Some(grad),
                }
                continue;
            }
            for (input, g) in self.backprop(id, grad) {
                if !self.nodes[input.0].requires_grad {
                    continue;
                }
                match &mut local[input.0] {
                    Some(acc) => acc.add_assign(&g),
                    slot @ None => *slot = Some(g),
                }
            }
        }
        Ok(())
    }

    fn backprop(&self, id: usize, grad: Tensor<S>) -> Vec<(Var, Tensor<S>)> {
        let node = &self.nodes[id];
        let val = |v: Var| &self.nodes[v.0].value;
        let want = |v: Var| self.nodes[v.0].requires_grad;
        let out = &node.value;
        let mut res = Vec::with_capacity(2);

        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                res.push((*a, reduce_to(&grad, val(*a))));
                res.push((*b, reduce_to(&grad, val(*b))));
            }
            Op::Sub(a, b) => {
                res.push((*a, reduce_to(&grad, val(*a))));
                res.push((*b, reduce_to(&grad.map(|g| -g), val(*b))));
            }
            Op::Mul(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                if want(*a) {
                    res.push((*a, reduce_to(&broadcast_mul(&grad, bv), av)));
                }
                if want(*b) {
                    res.push((*b, reduce_to(&broadcast_mul(&grad, av), bv)));
                }
            }
            Op::Affine(a, m) => {
                let m = *m;
                res.push((*a, grad.map(|g| g * m)));
            }
            Op::Abs(a) => {
                let g = grad
                    .zip_map(val(*a), |g, x| {
                        if x > S::zero() {
                            g
                        } else if x < S::zero() {
                            -g
                        } else {
                            S::zero()
                        }
                    })
                    .expect("abs shapes");
                res.push((*a, g));
            }
            Op::Sigmoid(a) => {
                let g = grad.zip_map(out, |g, s| g * s * (S::one() - s)).expect("sigmoid shapes");
                res.push((*a, g));
            }
            Op::Silu(a) => {
                let g = grad
                    .zip_map(val(*a), |g, x| {
                        let s = sigmoid(x);
                        g * s * (S::one() + x * (S::one() - s))
                    })
                    .expect("silu shapes");
                res.push((*a, g));
            }
            Op::Softplus(a) => {
                let g = grad.zip_map(val(*a), |g, x| g * sigmoid(x)).expect("softplus shapes");
                res.push((*a, g));
            }
            Op::Exp(a) => {
                let g = grad.zip_map(out, |g, e| g * e).expect("exp shapes");
                res.push((*a, g));
            }
            Op::ChannelMul(x, s) => {
                let (xv, sv) = (val(*x), val(*s));
                let shape = xv.shape();
                let (batch, ch) = (shape[0], shape[1]);
                let inner = xv.numel() / (batch * ch);
                let per_batch = sv.rank() == 2;
                let sd = sv.data();
                let gd = grad.data();
                if want(*x) {
                    let mut gx = vec![S::zero(); xv.numel()];
                    for (i, chunk) in gx.chunks_mut(inner).enumerate() {
                        let sc = if per_batch { sd[i] } else { sd[i % ch] };
                        let gsrc = &gd[i * inner..(i + 1) * inner];
                        for (o, &g) in chunk.iter_mut().zip(gsrc) {
                            *o = g * sc;
                        }
                    }
                    res.push((*x, Tensor::new(shape, gx).expect("channel_mul shape")));
                }
                if want(*s) {
                    let mut gs = vec![S::zero(); sv.numel()];
                    let xd = xv.data();
                    for i in 0..batch * ch {
                        let dot: S = gd[i * inner..(i + 1) * inner]
                            .iter()
                            .zip(&xd[i * inner..(i + 1) * inner])
                            .map(|(&g, &x)| g * x)
                            .sum();
                        let slot = if per_batch { i } else { i % ch };
                        gs[slot] += dot;
                    }
                    res.push((*s, Tensor::new(sv.shape(), gs).expect("channel_mul shape")));
                }
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            } => {
                let xv = val(*x);
                let shape = xv.shape();
                let (batch, ch) = (shape[0], shape[1]);
                let inner = xv.numel() / (batch * ch);
                let gam = val(*gamma).data();
                let gd = grad.data();
                let mut gx = vec![S::zero(); xv.numel()];
                let mut ggam = vec![S::zero(); ch];
                let mut gbeta = vec![S::zero(); ch];
                let inv_c = S::one() / S::cst(ch as f64);
                for b in 0..batch {
                    for p in 0..inner {
                        let r = rstd[b * inner + p];
                        let mut mean_d = S::zero();
                        let mut mean_dx = S::zero();
                        for c in 0..ch {
                            let i = (b * ch + c) * inner + p;
                            let d = gd[i] * gam[c];
                            mean_d += d;
                            mean_dx += d * xhat[i];
                            ggam[c] += gd[i] * xhat[i];
                            gbeta[c] += gd[i];
                        }
                        mean_d *= inv_c;
                        mean_dx *= inv_c;
                        for c in 0..ch {
                            let i = (b * ch + c) * inner + p;
                            gx[i] = r * (gd[i] * gam[c] - mean_d - xhat[i] * mean_dx);
                        }
                    }
                }
                res.push((*x, Tensor::new(shape, gx).expect("layernorm shape")));
                res.push((*gamma, Tensor::new(&[ch], ggam).expect("layernorm shape")));
                res.push((*beta, Tensor::new(&[ch], gbeta).expect("layernorm shape")));
            }
            Op::Conv2d { x, w, b, geo } => {
                let (xv, wv) = (val(*x), val(*w));
                let (gx, gw, gb) = kernels::conv2d_backward(xv.data(), wv.data(), grad.data(), geo);
                res.push((*x, Tensor::new(xv.shape(), gx).expect("conv shape")));
                res.push((*w, Tensor::new(wv.shape(), gw).expect("conv shape")));
                if let Some(b) = b {
                    res.push((*b, Tensor::new(&[geo.c_out], gb).expect("conv shape")));
                }
            }
            Op::Linear { x, w, b } => {
                let (xv, wv) = (val(*x), val(*w));
                let (d_in, d_out) = (wv.shape()[0], wv.shape()[1]);
                let rows = xv.numel() / d_in;
                let (gx, gw, gb) =
                    kernels::matmul_bias_backward(xv.data(), wv.data(), grad.data(), rows, d_in, d_out);
                res.push((*x, Tensor::new(xv.shape(), gx).expect("linear shape")));
                res.push((*w, Tensor::new(wv.shape(), gw).expect("linear shape")));
                if let Some(b) = b {
                    res.push((*b, Tensor::new(&[d_out], gb).expect("linear shape")));
                }
            }
            Op::Concat(inputs) => {
                let shape = out.shape();
                let batch = shape[0];
                let total = shape[1];
                let inner = out.numel() / (batch * total);
                let gd = grad.data();
                let mut offset = 0;
                for v in inputs {
                    let vs = val(*v).shape();
                    let c = vs[1];
                    if want(*v) {
                        let mut g = Vec::with_capacity(batch * c * inner);
                        for b in 0..batch {
                            let start = (b * total + offset) * inner;
                            g.extend_from_slice(&gd[start..start + c * inner]);
                        }
                        res.push((*v, Tensor::new(vs, g).expect("concat shape")));
                    }
                    offset += c;
                }
            }
            Op::Narrow { x, start } => {
                let xv = val(*x);
                let shape = xv.shape();
                let (batch, total) = (shape[0], shape[1]);
                let inner = xv.numel() / (batch * total);
                let len = out.shape()[1];
                let mut g = vec![S::zero(); xv.numel()];
                let gd = grad.data();
                for b in 0..batch {
                    let dst = (b * total + start) * inner;
                    let src = b * len * inner;
                    g[dst..dst + len * inner].copy_from_slice(&gd[src..src + len * inner]);
                }
                res.push((*x, Tensor::new(shape, g).expect("narrow shape")));
            }
            Op::Gather { x, index } => {
                let xv = val(*x);
                let mut g = vec![S::zero(); xv.numel()];
                for (&i, &gv) in index.iter().zip(grad.data()) {
                    if i != GATHER_ZERO {
                        g[i] += gv;
                    }
                }
                res.push((*x, Tensor::new(xv.shape(), g).expect("gather shape")));
            }
            Op::Reshape(x) => {
                let shape = val(*x).shape().to_vec();
                res.push((*x, grad.reshape(&shape).expect("reshape")));
            }
            Op::Sum(x) => {
                let g = grad.item();
                res.push((*x, Tensor::full(val(*x).shape(), g)));
            }
            Op::Mean(x) => {
                let xv = val(*x);
                let g = grad.item() / S::cst(xv.numel() as f64);
                res.push((*x, Tensor::full(xv.shape(), g)));
            }
            Op::AvgPool(x) => {
                let xv = val(*x);
                let s = xv.shape();
                let inner = s[2] * s[3];
                let scale = S::one() / S::cst(inner as f64);
                let mut g = Vec::with_capacity(xv.numel());
                for &gv in grad.data() {
                    g.extend(std::iter::repeat_n(gv * scale, inner));
                }
                res.push((*x, Tensor::new(s, g).expect("pool shape")));
            }
            Op::Fft2(x) => {
                let xv = val(*x);
                let s = xv.shape();
                let (h, w) = (s[s.len() - 2], s[s.len() - 1]);
                let mut buf: Vec<Complex<S>> = grad
                    .data()
                    .chunks(2)
                    .map(|p| Complex::new(p[0], p[1]))
                    .collect();
                kernels::fft2_planes(&mut buf, h, w, true);
                let g = buf.into_iter().map(|c| c.re).collect();
                res.push((*x, Tensor::new(s, g).expect("fft shape")));
            }
            Op::Scan {
                x,
                delta,
                a,
                b,
                c,
                d,
                dims,
                states,
                decays,
            } => {
                let grads = scan_kernel::scan_backward(
                    val(*x).data(),
                    val(*delta).data(),
                    val(*a).data(),
                    val(*b).data(),
                    val(*c).data(),
                    val(*d).data(),
                    states,
                    decays,
                    grad.data(),
                    *dims,
                );
                for (v, g) in [*x, *delta, *a, *b, *c, *d].into_iter().zip(grads) {
                    let shape = val(v).shape();
                    res.push((v, Tensor::new(shape, g).expect("scan shape")));
                }
            }
        }
        res
    }
}

#[inline]
pub(crate) fn sigmoid<S: Scalar>(x: S) -> S {
    if x >= S::zero() {
        S::one() / (S::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (S::one() + e)
    }
}

/// Elementwise product where either side may be a single element.
pub(crate) fn broadcast_mul<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>) -> Tensor<S> {
    if a.shape() == b.shape() {
        a.zip_map(b, |x, y| x * y).expect("same shape")
    } else if b.numel() == 1 {
        let s = b.item();
        a.map(|x| x * s)
    } else {
        let s = a.item();
        b.map(|x| x * s)
    }
}

/// Sums a broadcast gradient back down to the shape of `target`.
fn reduce_to<S: Scalar>(grad: &Tensor<S>, target: &Tensor<S>) -> Tensor<S> {
    if grad.shape() == target.shape() {
        grad.clone()
    } else {
        Tensor::full(target.shape(), grad.sum())
    }
}
