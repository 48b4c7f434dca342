use crate::error::Result;
use crate::graph::{Graph, Var};
use crate::kernels::ConvSpec;
use crate::network::params::{Builder, Ctx, ParamId};
use crate::ssm::SsmParams;
use crate::tensor::{Scalar, Tensor};

/// Bounds of the initial step size produced by a [`ScanProjection`].
pub const DT_MIN: f64 = 1e-3;
pub const DT_MAX: f64 = 1e-1;

#[derive(Clone, Debug)]
pub struct Conv {
    pub w: ParamId,
    pub b: Option<ParamId>,
    pub spec: ConvSpec,
}

impl Conv {
    pub fn new(bld: &mut Builder, name: &str, c_in: usize, c_out: usize, k: usize, spec: ConvSpec) -> Result<Self> {
        bld.scoped(name, |bld| {
            let w = bld.weight("w", &[c_out, c_in / spec.groups, k, k])?;
            let b = Some(bld.zeros("b", &[c_out])?);
            Ok(Self { w, b, spec })
        })
    }

    /// 1x1 convolution: a linear map applied to the channel vector of every pixel.
    pub fn pointwise(bld: &mut Builder, name: &str, c_in: usize, c_out: usize) -> Result<Self> {
        Self::new(bld, name, c_in, c_out, 1, ConvSpec::default())
    }

    /// 3x3 convolution, padding 1.
    pub fn same3(bld: &mut Builder, name: &str, c_in: usize, c_out: usize) -> Result<Self> {
        Self::new(
            bld,
            name,
            c_in,
            c_out,
            3,
            ConvSpec {
                stride: 1,
                padding: 1,
                groups: 1,
            },
        )
    }

    /// Depthwise 3x3 convolution, padding 1.
    pub fn depthwise3(bld: &mut Builder, name: &str, channels: usize) -> Result<Self> {
        Self::new(
            bld,
            name,
            channels,
            channels,
            3,
            ConvSpec {
                stride: 1,
                padding: 1,
                groups: channels,
            },
        )
    }

    pub fn forward<S: Scalar>(&self, cx: &mut Ctx<S>, x: Var) -> Result<Var> {
        let (w, b) = (cx.p(self.w), self.b.map(|b| cx.p(b)));
        cx.g.conv2d(x, w, b, self.spec)
    }
}

#[derive(Clone, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: Option<ParamId>,
}

impl Linear {
    pub fn new(bld: &mut Builder, name: &str, d_in: usize, d_out: usize, bias: bool) -> Result<Self> {
        bld.scoped(name, |bld| {
            let w = bld.weight("w", &[d_in, d_out])?;
            let b = if bias { Some(bld.zeros("b", &[d_out])?) } else { None };
            Ok(Self { w, b })
        })
    }

    pub fn forward<S: Scalar>(&self, cx: &mut Ctx<S>, x: Var) -> Result<Var> {
        let (w, b) = (cx.p(self.w), self.b.map(|b| cx.p(b)));
        cx.g.linear(x, w, b)
    }
}

/// Channel-axis layer norm with learnable scale and shift.
#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub fn new(bld: &mut Builder, name: &str, channels: usize) -> Result<Self> {
        bld.scoped(name, |bld| {
            Ok(Self {
                gamma: bld.ones("gamma", &[channels])?,
                beta: bld.zeros("beta", &[channels])?,
            })
        })
    }

    pub fn forward<S: Scalar>(&self, cx: &mut Ctx<S>, x: Var) -> Result<Var> {
        let (gamma, beta) = (cx.p(self.gamma), cx.p(self.beta));
        cx.g.layer_norm(x, gamma, beta)
    }
}

/// Token-wise projection of a `[B, L, D]` sequence onto scan parameters:
/// `delta = softplus(x W_dt + b_dt)`, `b = x W_b`, `c = x W_c`,
/// `a = -exp(a_log)`, plus the skip coefficient `d`.
#[derive(Clone, Debug)]
pub struct ScanProjection {
    pub dt: Linear,
    pub b: Linear,
    pub c: Linear,
    pub a_log: ParamId,
    pub d: ParamId,
}

impl ScanProjection {
    pub fn new(bld: &mut Builder, name: &str, dim: usize, state: usize) -> Result<Self> {
        bld.scoped(name, |bld| {
            let w_dt = bld.weight("dt.w", &[dim, dim])?;
            // softplus(bias) log-uniform in [DT_MIN, DT_MAX]
            let bias: Vec<f32> = (0..dim)
                .map(|_| {
                    let step = bld.uniform(DT_MIN.ln(), DT_MAX.ln()).exp();
                    (step + (-(-step).exp_m1()).ln()) as f32
                })
                .collect();
            let b_dt = bld.tensor("dt.b", Tensor::new(&[dim], bias)?)?;
            let b = Linear::new(bld, "b", dim, state, false)?;
            let c = Linear::new(bld, "c", dim, state, false)?;
            let ramp: Vec<f32> = (0..dim)
                .flat_map(|_| (0..state).map(|n| ((n + 1) as f32).ln()))
                .collect();
            let a_log = bld.tensor("a_log", Tensor::new(&[dim, state], ramp)?)?;
            let d = bld.ones("d", &[dim])?;
            Ok(Self {
                dt: Linear { w: w_dt, b: Some(b_dt) },
                b,
                c,
                a_log,
                d,
            })
        })
    }

    pub fn bind<S: Scalar>(&self, cx: &Ctx<S>) -> BoundProjection {
        BoundProjection {
            dt_w: cx.p(self.dt.w),
            dt_b: cx.p(self.dt.b.expect("dt bias")),
            b_w: cx.p(self.b.w),
            c_w: cx.p(self.c.w),
            a_log: cx.p(self.a_log),
            d: cx.p(self.d),
        }
    }

    pub fn project<S: Scalar>(&self, cx: &mut Ctx<S>, seq: Var) -> Result<SsmParams> {
        self.bind(cx).project(&mut cx.g, seq)
    }
}

/// A [`ScanProjection`] with its parameters resolved to tape variables.
#[derive(Clone, Copy, Debug)]
pub struct BoundProjection {
    pub dt_w: Var,
    pub dt_b: Var,
    pub b_w: Var,
    pub c_w: Var,
    pub a_log: Var,
    pub d: Var,
}

impl BoundProjection {
    pub fn project<S: Scalar>(&self, g: &mut Graph<S>, seq: Var) -> Result<SsmParams> {
        let pre = g.linear(seq, self.dt_w, Some(self.dt_b))?;
        let delta = g.softplus(pre);
        let b_in = g.linear(seq, self.b_w, None)?;
        let c_out = g.linear(seq, self.c_w, None)?;
        let e = g.exp(self.a_log);
        let a = g.scale(e, -1.0);
        Ok(SsmParams {
            delta,
            a,
            b_in,
            c_out,
            d_skip: self.d,
        })
    }
}
