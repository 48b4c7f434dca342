//! Building blocks of the dehazing network.

use crate::error::{Error, Result};
use crate::graph::Var;
use crate::network::layers::{Conv, LayerNorm, Linear, ScanProjection};
use crate::network::params::{Builder, Ctx, ParamId};
use crate::ssm::{self, ScanOrder};
use crate::tensor::Scalar;

/// Vision state-space block: gated input projection, depthwise conv, SiLU,
/// four-direction scan, gated output projection. Normalization is left to the caller.
#[derive(Clone, Debug)]
pub struct Vss {
    pub in_proj: Conv,
    pub dw: Conv,
    pub dirs: [ScanProjection; 4],
    pub out_proj: Conv,
    inner: usize,
}

impl Vss {
    pub fn new(bld: &mut Builder, name: &str, channels: usize, state: usize) -> Result<Self> {
        bld.scoped(name, |bld| {
            let inner = channels;
            let in_proj = Conv::pointwise(bld, "in_proj", channels, 2 * inner)?;
            let dw = Conv::depthwise3(bld, "dw", inner)?;
            let dirs = [
                ScanProjection::new(bld, "scan0", inner, state)?,
                ScanProjection::new(bld, "scan1", inner, state)?,
                ScanProjection::new(bld, "scan2", inner, state)?,
                ScanProjection::new(bld, "scan3", inner, state)?,
            ];
            let out_proj = Conv::pointwise(bld, "out_proj", inner, channels)?;
            Ok(Self {
                in_proj,
                dw,
                dirs,
                out_proj,
                inner,
            })
        })
    }

    pub fn forward<S: Scalar>(&self, cx: &mut Ctx<S>, x: Var) -> Result<Var> {
        let both = self.in_proj.forward(cx, x)?;
        let u = cx.g.narrow(both, 0, self.inner)?;
        let z = cx.g.narrow(both, self.inner, self.inner)?;
        let u = self.dw.forward(cx, u)?;
        let u = cx.g.silu(u);
        let bound: Vec<_> = self.dirs.iter().map(|d| d.bind(cx)).collect();
        let y = ssm::ss2d(&mut cx.g, u, |g, k, seq| bound[k].project(g, seq))?;
        let gate = cx.g.silu(z);
        let y = cx.g.mul(y, gate)?;
        self.out_proj.forward(cx, y)
    }
}

#[derive(Clone, Debug)]
pub struct Mlp {
    pub fc1: Conv,
    pub fc2: Conv,
}

impl Mlp {
    pub fn new(bld: &mut Builder, name: &str, channels: usize, expand: usize) -> Result<Self> {
        bld.scoped(name, |bld| {
            Ok(Self {
                fc1: Conv::pointwise(bld, "fc1", channels, channels * expand)?,
                fc2: Conv::pointwise(bld, "fc2", channels * expand, channels)?,
            })
        })
    }

    pub fn forward<S: Scalar>(&self, cx: &mut Ctx<S>, x: Var) -> Result<Var> {
        let h = self.fc1.forward(cx, x)?;
        let h = cx.g.silu(h);
        self.fc2.forward(cx, h)
    }
}

/// `u = x + alpha * VSS(LN(x))`, `out = u + beta * MLP(LN(u))`.
#[derive(Clone, Debug)]
pub struct DmBlock {
    pub norm1: LayerNorm,
    pub vss: Vss,
    pub alpha: ParamId,
    pub norm2: LayerNorm,
    pub mlp: Mlp,
    pub beta: ParamId,
}

impl DmBlock {
    pub fn new(bld: &mut Builder, name: &str, channels: usize, state: usize, expand: usize) -> Result<Self> {
        bld.scoped(name, |bld| {
            Ok(Self {
                norm1: LayerNorm::new(bld, "norm1", channels)?,
                vss: Vss::new(bld, "vss", channels, state)?,
                alpha: bld.ones("alpha", &[channels])?,
                norm2: LayerNorm::new(bld, "norm2", channels)?,
                mlp: Mlp::new(bld, "mlp", channels, expand)?,
                beta: bld.ones("beta", &[channels])?,
            })
        })
    }

    pub fn forward<S: Scalar>(&self, cx: &mut Ctx<S>, x: Var) -> Result<Var> {
        let h = self.norm1.forward(cx, x)?;
        let h = self.vss.forward(cx, h)?;
        let h = cx.g.channel_mul(h, cx.p(self.alpha))?;
        let u = cx.g.add(x, h)?;
        let h = self.norm2.forward(cx, u)?;
        let h = self.mlp.forward(cx, h)?;
        let h = cx.g.channel_mul(h, cx.p(self.beta))?;
        cx.g.add(u, h)
    }
}

/// `SiLU(DConv(Linear(x)))` with a channelwise linear map and a depthwise 3x3 conv.
#[derive(Clone, Debug)]
pub struct Extract {
    pub linear: Conv,
    pub dw: Conv,
}

impl Extract {
    pub fn new(bld: &mut Builder, name: &str, channels: usize) -> Result<Self> {
        bld.scoped(name, |bld| {
            Ok(Self {
                linear: Conv::pointwise(bld, "linear", channels, channels)?,
                dw: Conv::depthwise3(bld, "dw", channels)?,
            })
        })
    }

    pub fn forward<S: Scalar>(&self, cx: &mut Ctx<S>, x: Var) -> Result<Var> {
        let h = self.linear.forward(cx, x)?;
        let h = self.dw.forward(cx, h)?;
        Ok(cx.g.silu(h))
    }
}

/// `SiLU(Linear_r(x_rgb) + Linear_s(x_sar))`.
#[derive(Clone, Debug)]
pub struct JointGate {
    pub rgb: Conv,
    pub sar: Conv,
}

impl JointGate {
    pub fn new(bld: &mut Builder, name: &str, channels: usize) -> Result<Self> {
        bld.scoped(name, |bld| {
            Ok(Self {
                rgb: Conv::pointwise(bld, "rgb", channels, channels)?,
                sar: Conv::pointwise(bld, "sar", channels, channels)?,
            })
        })
    }

    pub fn forward<S: Scalar>(&self, cx: &mut Ctx<S>, x_rgb: Var, x_sar: Var) -> Result<Var> {
        if cx.g.shape(x_rgb) != cx.g.shape(x_sar) {
            return Err(Error::shape("joint_gate", cx.g.shape(x_rgb), cx.g.shape(x_sar)));
        }
        let a = self.rgb.forward(cx, x_rgb)?;
        let b = self.sar.forward(cx, x_sar)?;
        let s = cx.g.add(a, b)?;
        Ok(cx.g.silu(s))
    }
}

/// Tape variables produced by one [`Hpdm`] pass.
#[derive(Clone, Copy, Debug)]
pub struct HpdmOut {
    pub fused: Var,
    pub w1: Var,
    pub diff: Var,
}

/// Haze perception and decoupling: a difference scan between the modalities
/// yields a weight map `w1` that blends SAR into haze regions,
/// `fused = w1 * s + (1 - w1) * r`.
#[derive(Clone, Debug)]
pub struct Hpdm {
    pub extract_rgb: Extract,
    pub extract_sar: Extract,
    pub scan_rgb: ScanProjection,
    pub scan_sar: ScanProjection,
    pub gate: JointGate,
    pub proj: Conv,
    /// Replaces the learned weight map by a constant (global-fusion ablation).
    pub forced_w1: Option<f64>,
}

impl Hpdm {
    pub fn new(bld: &mut Builder, name: &str, channels: usize, state: usize) -> Result<Self> {
        bld.scoped(name, |bld| {
            Ok(Self {
                extract_rgb: Extract::new(bld, "extract_rgb", channels)?,
                extract_sar: Extract::new(bld, "extract_sar", channels)?,
                scan_rgb: ScanProjection::new(bld, "scan_rgb", channels, state)?,
                scan_sar: ScanProjection::new(bld, "scan_sar", channels, state)?,
                gate: JointGate::new(bld, "gate", channels)?,
                proj: Conv::pointwise(bld, "proj", channels, channels)?,
                forced_w1: None,
            })
        })
    }

    pub fn forward<S: Scalar>(&self, cx: &mut Ctx<S>, r: Var, s: Var) -> Result<HpdmOut> {
        if cx.g.shape(r) != cx.g.shape(s) {
            return Err(Error::Alignment {
                optical: cx.g.shape(r).to_vec(),
                sar: cx.g.shape(s).to_vec(),
            });
        }
        let shape = cx.g.shape(r).to_vec();
        let (h, w) = (shape[2], shape[3]);
        let er = self.extract_rgb.forward(cx, r)?;
        let es = self.extract_sar.forward(cx, s)?;
        let seq_r = ssm::to_sequence(&mut cx.g, er, ScanOrder::RowMajor)?;
        let seq_s = ssm::to_sequence(&mut cx.g, es, ScanOrder::RowMajor)?;
        let p_rgb = self.scan_rgb.project(cx, seq_r)?;
        let p_sar = self.scan_sar.project(cx, seq_s)?;
        let y = ssm::css2d(&mut cx.g, seq_r, seq_s, &p_rgb, &p_sar)?;
        let y = ssm::from_sequence(&mut cx.g, y, ScanOrder::RowMajor, h, w)?;
        let gate = self.gate.forward(cx, r, s)?;
        let diff = cx.g.mul(gate, y)?;
        let w1 = match self.forced_w1 {
            Some(v) => cx.input(crate::tensor::Tensor::full(&shape, S::cst(v))),
            None => {
                let logits = self.proj.forward(cx, diff)?;
                cx.g.sigmoid(logits)
            }
        };
        let fused = blend(cx, w1, s, r)?;
        Ok(HpdmOut { fused, w1, diff })
    }
}

/// `w * a + (1 - w) * b`.
pub fn blend<S: Scalar>(cx: &mut Ctx<S>, w: Var, a: Var, b: Var) -> Result<Var> {
    let wa = cx.g.mul(w, a)?;
    let inv = cx.g.one_minus(w);
    let wb = cx.g.mul(inv, b)?;
    cx.g.add(wa, wb)
}

#[derive(Clone, Copy, Debug)]
pub struct PfmOut {
    pub out: Var,
    pub coarse: Var,
    pub w2: Var,
}

/// Progressive fusion: a coarse fused feature gates both modalities (`w2`)
/// and then guides a state-space refinement of all three streams.
#[derive(Clone, Debug)]
pub struct Pfm {
    pub coarse: Conv,
    pub norm: LayerNorm,
    pub vss: Vss,
    pub gamma: ParamId,
    pub out: Conv,
}

impl Pfm {
    pub fn new(bld: &mut Builder, name: &str, channels: usize, state: usize) -> Result<Self> {
        bld.scoped(name, |bld| {
            Ok(Self {
                coarse: Conv::pointwise(bld, "coarse", 2 * channels, channels)?,
                norm: LayerNorm::new(bld, "norm", 3 * channels)?,
                vss: Vss::new(bld, "vss", 3 * channels, state)?,
                gamma: bld.ones("gamma", &[3 * channels])?,
                out: Conv::pointwise(bld, "out", 3 * channels, channels)?,
            })
        })
    }

    pub fn forward<S: Scalar>(&self, cx: &mut Ctx<S>, f_o: Var, f_s: Var) -> Result<PfmOut> {
        if cx.g.shape(f_o) != cx.g.shape(f_s) {
            return Err(Error::shape("pfm", cx.g.shape(f_o), cx.g.shape(f_s)));
        }
        let cat = cx.g.concat(&[f_o, f_s])?;
        let coarse = self.coarse.forward(cx, cat)?;
        let w2 = cx.g.sigmoid(coarse);
        let f_ao = cx.g.mul(w2, f_o)?;
        let inv = cx.g.one_minus(w2);
        let f_as = cx.g.mul(inv, f_s)?;
        let h = cx.g.concat(&[f_ao, f_as, coarse])?;
        let n = self.norm.forward(cx, h)?;
        let v = self.vss.forward(cx, n)?;
        let v = cx.g.channel_mul(v, cx.p(self.gamma))?;
        let h = cx.g.add(h, v)?;
        let out = self.out.forward(cx, h)?;
        Ok(PfmOut { out, coarse, w2 })
    }
}

/// Selective-kernel fusion of a skip and a main feature with per-channel
/// attention weights that sum to one.
#[derive(Clone, Debug)]
pub struct SkFusion {
    pub fc1: Linear,
    pub fc2: Linear,
    channels: usize,
}

pub fn sk_bottleneck(channels: usize) -> usize {
    (channels / 8).max(4)
}

impl SkFusion {
    pub fn new(bld: &mut Builder, name: &str, channels: usize) -> Result<Self> {
        let hidden = sk_bottleneck(channels);
        bld.scoped(name, |bld| {
            Ok(Self {
                fc1: Linear::new(bld, "fc1", channels, hidden, true)?,
                fc2: Linear::new(bld, "fc2", hidden, 2 * channels, true)?,
                channels,
            })
        })
    }

    /// Attention weight of the skip branch, `[B, C]`.
    pub fn attention<S: Scalar>(&self, cx: &mut Ctx<S>, skip: Var, main: Var) -> Result<Var> {
        if cx.g.shape(skip) != cx.g.shape(main) {
            return Err(Error::shape("sk_fusion", cx.g.shape(skip), cx.g.shape(main)));
        }
        let sum = cx.g.add(skip, main)?;
        let pooled = cx.g.avg_pool(sum)?;
        let h = self.fc1.forward(cx, pooled)?;
        let h = cx.g.silu(h);
        let logits = self.fc2.forward(cx, h)?;
        let l_skip = cx.g.narrow(logits, 0, self.channels)?;
        let l_main = cx.g.narrow(logits, self.channels, self.channels)?;
        // two-way softmax
        let d = cx.g.sub(l_skip, l_main)?;
        Ok(cx.g.sigmoid(d))
    }

    pub fn forward<S: Scalar>(&self, cx: &mut Ctx<S>, skip: Var, main: Var) -> Result<Var> {
        let a_skip = self.attention(cx, skip, main)?;
        let a_main = cx.g.one_minus(a_skip);
        let s = cx.g.channel_mul(skip, a_skip)?;
        let m = cx.g.channel_mul(main, a_main)?;
        cx.g.add(s, m)
    }
}
