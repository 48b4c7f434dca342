//! Forward constructors for every differentiable primitive.

use rustfft::num_complex::Complex;

use crate::error::{Error, Result};
use crate::graph::{broadcast_mul, sigmoid, Graph, Op, Var, GATHER_ZERO};
use crate::kernels::{self, ConvGeom, ConvSpec};
use crate::tensor::{numel, Scalar, Tensor};

pub const LAYERNORM_EPS: f64 = 1e-6;

impl<S: Scalar> Graph<S> {
    fn unary(&mut self, a: Var, op: Op<S>, f: impl Fn(S) -> S) -> Var {
        let value = self.value(a).map(f);
        let rg = self.requires_grad(a);
        self.push(value, op, rg)
    }

    fn broadcast_shape(&self, name: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.value(a), self.value(b));
        if sa.shape() == sb.shape() || sa.numel() == 1 || sb.numel() == 1 {
            Ok(())
        } else {
            Err(Error::shape(name, sa.shape(), sb.shape()))
        }
    }

    fn binary(&mut self, name: &'static str, a: Var, b: Var, op: Op<S>, f: impl Fn(S, S) -> S) -> Result<Var> {
        self.broadcast_shape(name, a, b)?;
        let (av, bv) = (self.value(a), self.value(b));
        let value = if av.shape() == bv.shape() {
            av.zip_map(bv, f)?
        } else if bv.numel() == 1 {
            let s = bv.item();
            av.map(|x| f(x, s))
        } else {
            let s = av.item();
            bv.map(|y| f(s, y))
        };
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(value, op, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.broadcast_shape("mul", a, b)?;
        let value = broadcast_mul(self.value(a), self.value(b));
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(value, Op::Mul(a, b), rg))
    }

    /// `a * scale + shift` with constant coefficients.
    pub fn affine(&mut self, a: Var, scale: f64, shift: f64) -> Var {
        let (m, c) = (S::cst(scale), S::cst(shift));
        self.unary(a, Op::Affine(a, m), |x| x * m + c)
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        self.affine(a, factor, 0.0)
    }

    /// `1 - a`.
    pub fn one_minus(&mut self, a: Var) -> Var {
        self.affine(a, -1.0, 1.0)
    }

    pub fn abs(&mut self, a: Var) -> Var {
        self.unary(a, Op::Abs(a), |x| x.abs())
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, Op::Sigmoid(a), sigmoid)
    }

    pub fn silu(&mut self, a: Var) -> Var {
        self.unary(a, Op::Silu(a), |x| x * sigmoid(x))
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        self.unary(a, Op::Softplus(a), softplus)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, Op::Exp(a), |x| x.exp())
    }

    /// Scales `x[B, C, ...]` per channel by `s[C]` or per (batch, channel) by `s[B, C]`.
    pub fn channel_mul(&mut self, x: Var, s: Var) -> Result<Var> {
        let (xv, sv) = (self.value(x), self.value(s));
        let shape = xv.shape();
        let ok = shape.len() >= 2
            && (sv.shape() == [shape[1]] || sv.shape() == [shape[0], shape[1]]);
        if !ok {
            return Err(Error::shape("channel_mul", shape, sv.shape()));
        }
        let (batch, ch) = (shape[0], shape[1]);
        let inner = xv.numel() / (batch * ch).max(1);
        let per_batch = sv.rank() == 2;
        let mut data = xv.data().to_vec();
        for (i, chunk) in data.chunks_mut(inner.max(1)).enumerate() {
            let sc = if per_batch { sv.data()[i] } else { sv.data()[i % ch] };
            for v in chunk {
                *v *= sc;
            }
        }
        let value = Tensor::new(shape, data)?;
        let rg = self.any_grad(&[x, s]);
        Ok(self.push(value, Op::ChannelMul(x, s), rg))
    }

    /// Normalizes `x[B, C, ...]` over the channel axis, then applies `gamma[C]`, `beta[C]`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        let xv = self.value(x);
        let shape = xv.shape().to_vec();
        if shape.len() < 2 {
            return Err(Error::shape("layer_norm", &shape, self.shape(gamma)));
        }
        let (batch, ch) = (shape[0], shape[1]);
        for p in [gamma, beta] {
            if self.shape(p) != [ch] {
                return Err(Error::shape("layer_norm", &shape, self.shape(p)));
            }
        }
        let inner = xv.numel() / (batch * ch).max(1);
        let xd = xv.data();
        let gam = self.value(gamma).data();
        let bet = self.value(beta).data();
        let eps = S::cst(LAYERNORM_EPS);
        let inv_c = S::one() / S::cst(ch as f64);
        let mut xhat = vec![S::zero(); xd.len()];
        let mut rstd = vec![S::zero(); batch * inner];
        let mut out = vec![S::zero(); xd.len()];
        for b in 0..batch {
            for p in 0..inner {
                let idx = |c: usize| (b * ch + c) * inner + p;
                let mean = (0..ch).map(|c| xd[idx(c)]).sum::<S>() * inv_c;
                let var = (0..ch)
                    .map(|c| {
                        let d = xd[idx(c)] - mean;
                        d * d
                    })
                    .sum::<S>()
                    * inv_c;
                let r = S::one() / (var + eps).sqrt();
                rstd[b * inner + p] = r;
                for c in 0..ch {
                    let i = idx(c);
                    let h = (xd[i] - mean) * r;
                    xhat[i] = h;
                    out[i] = h * gam[c] + bet[c];
                }
            }
        }
        let value = Tensor::new(&shape, out)?;
        let rg = self.any_grad(&[x, gamma, beta]);
        Ok(self.push(
            value,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            },
            rg,
        ))
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, spec: ConvSpec) -> Result<Var> {
        let geo = ConvGeom::resolve(self.shape(x), self.shape(w), spec)?;
        if let Some(b) = b {
            if self.shape(b) != [geo.c_out] {
                return Err(Error::shape("conv2d bias", self.shape(w), self.shape(b)));
            }
        }
        let out = kernels::conv2d_forward(
            self.value(x).data(),
            self.value(w).data(),
            b.map(|b| self.value(b).data()),
            &geo,
        );
        let value = Tensor::new(&geo.out_shape(), out)?;
        let mut deps = vec![x, w];
        deps.extend(b);
        let rg = self.any_grad(&deps);
        Ok(self.push(value, Op::Conv2d { x, w, b, geo }, rg))
    }

    /// `out[..., j] = sum_i x[..., i] w[i, j] + b[j]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (xs, ws) = (self.shape(x), self.shape(w));
        if xs.is_empty() || ws.len() != 2 || xs[xs.len() - 1] != ws[0] {
            return Err(Error::shape("linear", xs, ws));
        }
        let (d_in, d_out) = (ws[0], ws[1]);
        if let Some(b) = b {
            if self.shape(b) != [d_out] {
                return Err(Error::shape("linear bias", ws, self.shape(b)));
            }
        }
        let mut out_shape = xs.to_vec();
        *out_shape.last_mut().unwrap() = d_out;
        let rows = numel(xs) / d_in.max(1);
        let out = kernels::matmul_bias(
            self.value(x).data(),
            self.value(w).data(),
            b.map(|b| self.value(b).data()),
            rows,
            d_in,
            d_out,
        );
        let value = Tensor::new(&out_shape, out)?;
        let mut deps = vec![x, w];
        deps.extend(b);
        let rg = self.any_grad(&deps);
        Ok(self.push(value, Op::Linear { x, w, b }, rg))
    }

    /// Concatenates along axis 1; all other extents must agree.
    pub fn concat(&mut self, inputs: &[Var]) -> Result<Var> {
        let first = *inputs
            .first()
            .ok_or_else(|| Error::Config("concat of zero tensors".into()))?;
        let base = self.shape(first).to_vec();
        if base.len() < 2 {
            return Err(Error::shape("concat", &base, &base));
        }
        let mut total = 0;
        for &v in inputs {
            let s = self.shape(v);
            if s.len() != base.len() || s[0] != base[0] || s[2..] != base[2..] {
                return Err(Error::shape("concat", &base, s));
            }
            total += s[1];
        }
        let batch = base[0];
        let inner: usize = base[2..].iter().product();
        let mut data = Vec::with_capacity(batch * total * inner);
        for b in 0..batch {
            for &v in inputs {
                let t = self.value(v);
                let c = t.shape()[1];
                data.extend_from_slice(&t.data()[b * c * inner..(b + 1) * c * inner]);
            }
        }
        let mut shape = base.clone();
        shape[1] = total;
        let value = Tensor::new(&shape, data)?;
        let rg = self.any_grad(inputs);
        Ok(self.push(value, Op::Concat(inputs.to_vec()), rg))
    }

    /// Slice `start..start + len` of axis 1.
    pub fn narrow(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let xv = self.value(x);
        let shape = xv.shape().to_vec();
        if shape.len() < 2 || start + len > shape[1] {
            return Err(Error::shape("narrow", &shape, &[start, len]));
        }
        let (batch, total) = (shape[0], shape[1]);
        let inner: usize = shape[2..].iter().product();
        let mut data = Vec::with_capacity(batch * len * inner);
        for b in 0..batch {
            let s = (b * total + start) * inner;
            data.extend_from_slice(&xv.data()[s..s + len * inner]);
        }
        let mut out_shape = shape;
        out_shape[1] = len;
        let value = Tensor::new(&out_shape, data)?;
        let rg = self.requires_grad(x);
        Ok(self.push(value, Op::Narrow { x, start }, rg))
    }

    /// `out.flat[i] = x.flat[index[i]]`; the zero sentinel yields 0.
    pub(crate) fn gather(&mut self, x: Var, index: Vec<usize>, shape: &[usize]) -> Result<Var> {
        if numel(shape) != index.len() {
            return Err(Error::shape("gather", shape, &[index.len()]));
        }
        let xd = self.value(x).data();
        let n = xd.len();
        let mut data = Vec::with_capacity(index.len());
        for &i in &index {
            if i == GATHER_ZERO {
                data.push(S::zero());
            } else if i < n {
                data.push(xd[i]);
            } else {
                return Err(Error::shape("gather", &[n], &[i]));
            }
        }
        let value = Tensor::new(shape, data)?;
        let rg = self.requires_grad(x);
        Ok(self.push(value, Op::Gather { x, index }, rg))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).clone().reshape(shape)?;
        let rg = self.requires_grad(x);
        Ok(self.push(value, Op::Reshape(x), rg))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let value = Tensor::scalar(self.value(x).sum());
        let rg = self.requires_grad(x);
        self.push(value, Op::Sum(x), rg)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let value = Tensor::scalar(self.value(x).mean());
        let rg = self.requires_grad(x);
        self.push(value, Op::Mean(x), rg)
    }

    /// Global average pool `[B, C, H, W] -> [B, C]`.
    pub fn avg_pool(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        let s = xv.shape();
        if s.len() != 4 {
            return Err(Error::shape("avg_pool", s, &[0, 0, 0, 0]));
        }
        let inner = s[2] * s[3];
        let inv = S::one() / S::cst(inner as f64);
        let data = xv
            .data()
            .chunks(inner)
            .map(|c| c.iter().copied().sum::<S>() * inv)
            .collect();
        let value = Tensor::new(&[s[0], s[1]], data)?;
        let rg = self.requires_grad(x);
        Ok(self.push(value, Op::AvgPool(x), rg))
    }

    /// Zero padding of the two spatial axes of `[B, C, H, W]`.
    pub fn pad2d(&mut self, x: Var, top: usize, bottom: usize, left: usize, right: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 4 {
            return Err(Error::shape("pad2d", &s, &[0, 0, 0, 0]));
        }
        let (bc, h, w) = (s[0] * s[1], s[2], s[3]);
        let (ho, wo) = (h + top + bottom, w + left + right);
        let mut index = Vec::with_capacity(bc * ho * wo);
        for p in 0..bc {
            for y in 0..ho {
                for xx in 0..wo {
                    let inside = y >= top && y < top + h && xx >= left && xx < left + w;
                    index.push(if inside {
                        (p * h + (y - top)) * w + (xx - left)
                    } else {
                        GATHER_ZERO
                    });
                }
            }
        }
        self.gather(x, index, &[s[0], s[1], ho, wo])
    }

    /// `[B, C r^2, H, W] -> [B, C, H r, W r]`.
    pub fn pixel_shuffle(&mut self, x: Var, factor: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        let rr = factor * factor;
        if s.len() != 4 || factor == 0 || s[1] % rr != 0 {
            return Err(Error::shape("pixel_shuffle", &s, &[factor]));
        }
        let (batch, cin, h, w) = (s[0], s[1], s[2], s[3]);
        let c = cin / rr;
        let (ho, wo) = (h * factor, w * factor);
        let mut index = Vec::with_capacity(batch * c * ho * wo);
        for b in 0..batch {
            for ch in 0..c {
                for y in 0..ho {
                    for xx in 0..wo {
                        let src_c = ch * rr + (y % factor) * factor + xx % factor;
                        index.push(((b * cin + src_c) * h + y / factor) * w + xx / factor);
                    }
                }
            }
        }
        self.gather(x, index, &[batch, c, ho, wo])
    }

    /// Unnormalized forward 2-D DFT of the trailing two axes; output appends a
    /// (real, imaginary) axis.
    pub fn fft2(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        let s = xv.shape().to_vec();
        if s.len() < 2 {
            return Err(Error::shape("fft2", &s, &[0, 0]));
        }
        let (h, w) = (s[s.len() - 2], s[s.len() - 1]);
        if !kernels::is_pow2(h) || !kernels::is_pow2(w) {
            return Err(Error::Config(format!("fft2 needs power-of-two extents, got {h}x{w}")));
        }
        let mut buf: Vec<Complex<S>> = xv.data().iter().map(|&v| Complex::new(v, S::zero())).collect();
        kernels::fft2_planes(&mut buf, h, w, false);
        let mut data = Vec::with_capacity(buf.len() * 2);
        for c in buf {
            data.push(c.re);
            data.push(c.im);
        }
        let mut shape = s;
        shape.push(2);
        let value = Tensor::new(&shape, data)?;
        let rg = self.requires_grad(x);
        Ok(self.push(value, Op::Fft2(x), rg))
    }
}

#[inline]
pub(crate) fn softplus<S: Scalar>(x: S) -> S {
    if x > S::cst(20.0) {
        x
    } else {
        x.exp().ln_1p()
    }
}
