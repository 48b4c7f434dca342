//! Full-image and region-split quality metrics for a set of outputs.

use dehazemamba_core::data::{psnr, ssim, ImagePair};
use dehazemamba_core::{Error, Result, Tensor};

/// Absolute/squared error sums over one pixel region (all channels).
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct RegionSums {
    pub count: usize,
    pub abs: f64,
    pub sq: f64,
}

impl RegionSums {
    pub fn mae(&self) -> Option<f64> {
        (self.count > 0).then(|| self.abs / self.count as f64)
    }

    pub fn mse(&self) -> Option<f64> {
        (self.count > 0).then(|| self.sq / self.count as f64)
    }

    pub fn merge(&mut self, o: &RegionSums) {
        self.count += o.count;
        self.abs += o.abs;
        self.sq += o.sq;
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalRow {
    pub index: usize,
    pub psnr: f64,
    pub ssim: f64,
    pub all: RegionSums,
    /// Pixels with `mask == 0`.
    pub free: RegionSums,
    /// Pixels with `mask > 0`.
    pub haze: RegionSums,
}

/// Compares `output` (`[3, H, W]`) with the clear image of `pair`.
pub fn eval_row(index: usize, output: &Tensor<f32>, pair: &ImagePair) -> Result<EvalRow> {
    if output.shape() != pair.clear.shape() {
        return Err(Error::shape("eval", output.shape(), pair.clear.shape()));
    }
    let plane = pair.height() * pair.width();
    let mask = pair.mask.data();
    let (mut all, mut free, mut haze) = (RegionSums::default(), RegionSums::default(), RegionSums::default());
    for (i, (&o, &c)) in output.data().iter().zip(pair.clear.data()).enumerate() {
        let d = o as f64 - c as f64;
        let s = RegionSums {
            count: 1,
            abs: d.abs(),
            sq: d * d,
        };
        all.merge(&s);
        if mask[i % plane] == 0.0 {
            free.merge(&s);
        } else {
            haze.merge(&s);
        }
    }
    Ok(EvalRow {
        index,
        psnr: psnr(output, &pair.clear)?,
        ssim: ssim(output, &pair.clear)?,
        all,
        free,
        haze,
    })
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct EvalTable {
    pub rows: Vec<EvalRow>,
}

impl EvalTable {
    pub fn mean_psnr(&self) -> Option<f64> {
        (!self.rows.is_empty()).then(|| self.rows.iter().map(|r| r.psnr).sum::<f64>() / self.rows.len() as f64)
    }

    pub fn mean_ssim(&self) -> Option<f64> {
        (!self.rows.is_empty()).then(|| self.rows.iter().map(|r| r.ssim).sum::<f64>() / self.rows.len() as f64)
    }

    /// Region sums pooled over every image: `(all, free, haze)`.
    pub fn pooled(&self) -> (RegionSums, RegionSums, RegionSums) {
        let (mut a, mut f, mut h) = (RegionSums::default(), RegionSums::default(), RegionSums::default());
        for r in &self.rows {
            a.merge(&r.all);
            f.merge(&r.free);
            h.merge(&r.haze);
        }
        (a, f, h)
    }

    pub fn to_tsv(&self) -> String {
        fn opt(v: Option<f64>) -> String {
            v.map_or_else(|| "-".into(), |v| format!("{v:.6}"))
        }
        let mut out = String::from(
            "index\tpsnr\tssim\tmae\tmse\tmae_free\tmse_free\tmae_haze\tmse_haze\tn_free\tn_haze\n",
        );
        for r in &self.rows {
            out += &format!(
                "{}\t{:.4}\t{:.6}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\n",
                r.index,
                r.psnr,
                r.ssim,
                opt(r.all.mae()),
                opt(r.all.mse()),
                opt(r.free.mae()),
                opt(r.free.mse()),
                opt(r.haze.mae()),
                opt(r.haze.mse()),
                r.free.count,
                r.haze.count
            );
        }
        if let (Some(p), Some(s)) = (self.mean_psnr(), self.mean_ssim()) {
            let (a, f, h) = self.pooled();
            out += &format!(
                "mean\t{p:.4}\t{s:.6}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\n",
                opt(a.mae()),
                opt(a.mse()),
                opt(f.mae()),
                opt(f.mse()),
                opt(h.mae()),
                opt(h.mse()),
                f.count,
                h.count
            );
        }
        out
    }
}

/// Mean `|output - hazy|` over haze-free pixels of every pair.
pub fn haze_free_change(outputs: &[Tensor<f32>], pairs: &[ImagePair]) -> Result<f64> {
    let (mut total, mut count) = (0.0, 0usize);
    for (o, p) in outputs.iter().zip(pairs) {
        if o.shape() != p.hazy.shape() {
            return Err(Error::shape("haze_free_change", o.shape(), p.hazy.shape()));
        }
        let plane = p.height() * p.width();
        let mask = p.mask.data();
        for (i, (&a, &b)) in o.data().iter().zip(p.hazy.data()).enumerate() {
            if mask[i % plane] == 0.0 {
                total += (a as f64 - b as f64).abs();
                count += 1;
            }
        }
    }
    if count == 0 {
        return Err(Error::Data("no haze-free pixels to compare".into()));
    }
    Ok(total / count as f64)
}
