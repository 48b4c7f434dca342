use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Var;
use crate::kernels::ConvSpec;
use crate::network::blocks::{DmBlock, Hpdm, Pfm, SkFusion};
use crate::network::layers::Conv;
use crate::network::params::{Builder, Ctx, ParamStore};
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Variant {
    #[serde(rename = "micro")]
    Micro,
    T,
    B,
    L,
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "micro" => Ok(Variant::Micro),
            "T" | "t" => Ok(Variant::T),
            "B" | "b" => Ok(Variant::B),
            "L" | "l" => Ok(Variant::L),
            other => Err(Error::Config(format!("unknown model variant {other}"))),
        }
    }
}

/// Architecture hyperparameters. Stages 1-3 are the encoder, 4-5 the decoder.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub variant: Variant,
    pub depths: Vec<usize>,
    pub widths: Vec<usize>,
    pub state_size: usize,
    pub expand: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::micro()
    }
}

impl ModelConfig {
    pub fn for_variant(variant: Variant) -> Self {
        let (depths, widths, state_size) = match variant {
            Variant::Micro => (vec![1, 1, 1, 1, 1], vec![8, 16, 32, 16, 8], 4),
            Variant::T => (vec![2, 2, 2, 1, 1], vec![24, 48, 96, 48, 24], 16),
            Variant::B => (vec![4, 4, 4, 2, 2], vec![24, 48, 96, 48, 24], 16),
            Variant::L => (vec![8, 8, 8, 4, 4], vec![24, 48, 96, 48, 24], 16),
        };
        Self {
            variant,
            depths,
            widths,
            state_size,
            expand: 2,
        }
    }

    pub fn micro() -> Self {
        Self::for_variant(Variant::Micro)
    }

    pub fn validate(&self) -> Result<()> {
        if self.depths.len() != 5 || self.widths.len() != 5 {
            return Err(Error::Config("depths and widths need five stages".into()));
        }
        if self.depths.contains(&0) || self.widths.contains(&0) {
            return Err(Error::Config("stage depths and widths must be positive".into()));
        }
        let w = &self.widths;
        if !(w[0] < w[1] && w[1] < w[2]) {
            return Err(Error::Config(format!("encoder widths must increase, got {w:?}")));
        }
        if w[3] != w[1] || w[4] != w[0] {
            return Err(Error::Config(format!(
                "decoder widths must mirror the encoder for skip fusion, got {w:?}"
            )));
        }
        if self.state_size == 0 || self.expand == 0 {
            return Err(Error::Config("state_size and expand must be positive".into()));
        }
        Ok(())
    }
}

/// Per-stage fusion intermediates: optical `r`, SAR `s`, fused `f`, and the
/// two weight maps.
#[derive(Clone, Copy, Debug)]
pub struct FusionBundle {
    pub r: Var,
    pub s: Var,
    pub f: Var,
    pub w1: Var,
    pub w2: Var,
}

pub struct ModelOutput {
    /// `hazy + residual`, unclamped.
    pub image: Var,
    pub residual: Var,
    pub fusion: Vec<FusionBundle>,
}

#[derive(Clone, Debug)]
pub struct Downsample {
    pub conv: Conv,
}

impl Downsample {
    fn new(bld: &mut Builder, name: &str, c_in: usize, c_out: usize) -> Result<Self> {
        let spec = ConvSpec {
            stride: 2,
            padding: 0,
            groups: 1,
        };
        Ok(Self {
            conv: Conv::new(bld, name, c_in, c_out, 3, spec)?,
        })
    }

    /// Stride-2 3x3 conv; the single leading row/column of zeros gives the
    /// same windows as symmetric padding 1 on even extents.
    pub fn forward<S: Scalar>(&self, cx: &mut Ctx<S>, x: Var) -> Result<Var> {
        let p = cx.g.pad2d(x, 1, 0, 1, 0)?;
        self.conv.forward(cx, p)
    }
}

#[derive(Clone, Debug)]
pub struct Upsample {
    pub conv: Conv,
}

impl Upsample {
    fn new(bld: &mut Builder, name: &str, c_in: usize, c_out: usize) -> Result<Self> {
        Ok(Self {
            conv: Conv::pointwise(bld, name, c_in, 4 * c_out)?,
        })
    }

    pub fn forward<S: Scalar>(&self, cx: &mut Ctx<S>, x: Var) -> Result<Var> {
        let h = self.conv.forward(cx, x)?;
        cx.g.pixel_shuffle(h, 2)
    }
}

/// The dual-branch encoder / single-stream decoder dehazing network.
#[derive(Clone, Debug)]
pub struct DehazeMamba {
    pub cfg: ModelConfig,
    pub stem_rgb: Conv,
    pub stem_sar: Conv,
    pub enc_rgb: Vec<Vec<DmBlock>>,
    pub enc_sar: Vec<Vec<DmBlock>>,
    pub hpdm: Vec<Hpdm>,
    pub pfm: Vec<Pfm>,
    pub down_rgb: Vec<Downsample>,
    pub down_sar: Vec<Downsample>,
    pub up: Vec<Upsample>,
    pub skip: Vec<SkFusion>,
    pub dec: Vec<Vec<DmBlock>>,
    pub head: Conv,
}

fn blocks(bld: &mut Builder, name: &str, depth: usize, width: usize, cfg: &ModelConfig) -> Result<Vec<DmBlock>> {
    (0..depth)
        .map(|i| DmBlock::new(bld, &format!("{name}.{i}"), width, cfg.state_size, cfg.expand))
        .collect()
}

impl DehazeMamba {
    /// Builds the network and its initial parameters. The output head is
    /// zero-initialized so the untrained model returns its hazy input.
    pub fn new(cfg: &ModelConfig, seed: u64) -> Result<(Self, ParamStore<f32>)> {
        cfg.validate()?;
        let w = &cfg.widths;
        let d = &cfg.depths;
        let mut bld = Builder::new(seed);
        let b = &mut bld;
        let stem_rgb = Conv::same3(b, "stem_rgb", 3, w[0])?;
        let stem_sar = Conv::same3(b, "stem_sar", 1, w[0])?;
        let mut enc_rgb = Vec::new();
        let mut enc_sar = Vec::new();
        let mut hpdm = Vec::new();
        let mut pfm = Vec::new();
        for i in 0..3 {
            enc_rgb.push(blocks(b, &format!("enc{i}.rgb"), d[i], w[i], cfg)?);
            enc_sar.push(blocks(b, &format!("enc{i}.sar"), d[i], w[i], cfg)?);
            hpdm.push(Hpdm::new(b, &format!("enc{i}.hpdm"), w[i], cfg.state_size)?);
            pfm.push(Pfm::new(b, &format!("enc{i}.pfm"), w[i], cfg.state_size)?);
        }
        let mut down_rgb = Vec::new();
        let mut down_sar = Vec::new();
        for i in 0..2 {
            down_rgb.push(Downsample::new(b, &format!("down{i}.rgb"), w[i], w[i + 1])?);
            down_sar.push(Downsample::new(b, &format!("down{i}.sar"), w[i], w[i + 1])?);
        }
        let mut up = Vec::new();
        let mut skip = Vec::new();
        let mut dec = Vec::new();
        for i in 3..5 {
            up.push(Upsample::new(b, &format!("dec{i}.up"), w[i - 1], w[i])?);
            skip.push(SkFusion::new(b, &format!("dec{i}.skip"), w[i])?);
            dec.push(blocks(b, &format!("dec{i}.blocks"), d[i], w[i], cfg)?);
        }
        let head = b.scoped("head", |b| {
            Ok(Conv {
                w: b.zeros("w", &[3, w[4], 3, 3])?,
                b: Some(b.zeros("b", &[3])?),
                spec: ConvSpec {
                    stride: 1,
                    padding: 1,
                    groups: 1,
                },
            })
        })?;
        let model = Self {
            cfg: cfg.clone(),
            stem_rgb,
            stem_sar,
            enc_rgb,
            enc_sar,
            hpdm,
            pfm,
            down_rgb,
            down_sar,
            up,
            skip,
            dec,
            head,
        };
        Ok((model, bld.finish()))
    }

    /// Pins every HPDM weight map to a constant (`Some(1.0)` is global SAR fusion).
    pub fn force_w1(&mut self, value: Option<f64>) {
        for h in &mut self.hpdm {
            h.forced_w1 = value;
        }
    }

    pub fn check_inputs(hazy: &[usize], sar: &[usize]) -> Result<()> {
        if hazy.len() != 4 || hazy[1] != 3 {
            return Err(Error::Config(format!("optical input must be [B, 3, H, W], got {hazy:?}")));
        }
        if sar.len() != 4 || sar[1] != 1 {
            return Err(Error::Config(format!("SAR input must be [B, 1, H, W], got {sar:?}")));
        }
        if hazy[0] != sar[0] || hazy[2..] != sar[2..] {
            return Err(Error::Alignment {
                optical: hazy.to_vec(),
                sar: sar.to_vec(),
            });
        }
        if hazy[2] % 4 != 0 || hazy[3] % 4 != 0 || hazy[2] == 0 || hazy[3] == 0 {
            return Err(Error::Config(format!(
                "spatial extents must be positive multiples of 4, got {}x{}",
                hazy[2], hazy[3]
            )));
        }
        Ok(())
    }

    pub fn forward<S: Scalar>(&self, cx: &mut Ctx<S>, hazy: Var, sar: Var) -> Result<ModelOutput> {
        Self::check_inputs(cx.g.shape(hazy), cx.g.shape(sar))?;
        let mut r = self.stem_rgb.forward(cx, hazy)?;
        let mut s = self.stem_sar.forward(cx, sar)?;
        let mut fusion = Vec::with_capacity(3);
        let mut skips = Vec::with_capacity(2);
        for i in 0..3 {
            for blk in &self.enc_rgb[i] {
                r = blk.forward(cx, r)?;
            }
            for blk in &self.enc_sar[i] {
                s = blk.forward(cx, s)?;
            }
            let h = self.hpdm[i].forward(cx, r, s)?;
            let p = self.pfm[i].forward(cx, h.fused, s)?;
            fusion.push(FusionBundle {
                r,
                s,
                f: p.out,
                w1: h.w1,
                w2: p.w2,
            });
            r = cx.g.add(r, p.out)?;
            if i < 2 {
                skips.push(r);
                r = self.down_rgb[i].forward(cx, r)?;
                s = self.down_sar[i].forward(cx, s)?;
            }
        }
        let mut x = r;
        for j in 0..2 {
            x = self.up[j].forward(cx, x)?;
            x = self.skip[j].forward(cx, skips[1 - j], x)?;
            for blk in &self.dec[j] {
                x = blk.forward(cx, x)?;
            }
        }
        let residual = self.head.forward(cx, x)?;
        let image = cx.g.add(hazy, residual)?;
        Ok(ModelOutput {
            image,
            residual,
            fusion,
        })
    }

    /// Single forward pass without a gradient tape, clamped to `[0, 1]`.
    pub fn infer(&self, store: &ParamStore<f32>, hazy: &Tensor<f32>, sar: &Tensor<f32>) -> Result<Tensor<f32>> {
        let mut cx = Ctx::frozen(store);
        let h = cx.input(hazy.clone());
        let s = cx.input(sar.clone());
        let out = self.forward(&mut cx, h, s)?;
        Ok(cx.g.value(out.image).map(|v| v.clamp(0.0, 1.0)))
    }
}
