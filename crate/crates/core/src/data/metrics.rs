//! Full-reference image quality metrics on the 8-bit scale.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Images are stored in `[0, 1]` and measured on this scale.
pub const PIXEL_PEAK: f64 = 255.0;

/// Returned for identical images instead of infinity.
pub const PSNR_CAP: f64 = 99.0;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

/// ITU-R BT.601 luma weights.
pub const LUMA: [f64; 3] = [0.299, 0.587, 0.114];

fn same_shape(op: &'static str, a: &Tensor<f32>, b: &Tensor<f32>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(op, a.shape(), b.shape()));
    }
    Ok(())
}

/// Peak signal-to-noise ratio in dB, capped at [`PSNR_CAP`].
pub fn psnr(a: &Tensor<f32>, b: &Tensor<f32>) -> Result<f64> {
    same_shape("psnr", a, b)?;
    if a.numel() == 0 {
        return Err(Error::Data("psnr of empty images".into()));
    }
    let sse: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| {
            let d = (x as f64 - y as f64) * PIXEL_PEAK;
            d * d
        })
        .sum();
    let mse = sse / a.numel() as f64;
    if mse == 0.0 {
        return Ok(PSNR_CAP);
    }
    Ok((10.0 * (PIXEL_PEAK * PIXEL_PEAK / mse).log10()).min(PSNR_CAP))
}

/// 8-bit luminance plane of a `[3, H, W]` image; `[1, H, W]` passes through.
pub fn luminance(img: &Tensor<f32>) -> Result<Vec<f64>> {
    let s = img.shape();
    if s.len() != 3 || (s[0] != 3 && s[0] != 1) {
        return Err(Error::Config(format!("expected a [3|1, H, W] image, got {s:?}")));
    }
    let plane = s[1] * s[2];
    let d = img.data();
    if s[0] == 1 {
        return Ok(d.iter().map(|&v| v as f64 * PIXEL_PEAK).collect());
    }
    Ok((0..plane)
        .map(|i| {
            PIXEL_PEAK
                * (LUMA[0] * d[i] as f64 + LUMA[1] * d[plane + i] as f64 + LUMA[2] * d[2 * plane + i] as f64)
        })
        .collect())
}

/// Normalized 11x11 Gaussian window, row-major.
pub fn gaussian_window() -> Vec<f64> {
    let r = (SSIM_WINDOW / 2) as f64;
    let g: Vec<f64> = (0..SSIM_WINDOW)
        .map(|i| {
            let t = i as f64 - r;
            (-t * t / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp()
        })
        .collect();
    let total: f64 = g.iter().sum();
    let mut w = Vec::with_capacity(SSIM_WINDOW * SSIM_WINDOW);
    for gy in &g {
        for gx in &g {
            w.push(gy * gx / (total * total));
        }
    }
    w
}

/// Mean structural similarity over every fully-contained window, on the
/// luminance channel.
pub fn ssim(a: &Tensor<f32>, b: &Tensor<f32>) -> Result<f64> {
    same_shape("ssim", a, b)?;
    let (h, w) = match a.shape() {
        [_, h, w] => (*h, *w),
        _ => (0, 0),
    };
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::Config(format!(
            "ssim needs [C, H, W] images of at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {:?}",
            a.shape()
        )));
    }
    let la = luminance(a)?;
    let lb = luminance(b)?;
    let win = gaussian_window();
    let c1 = (SSIM_K1 * PIXEL_PEAK).powi(2);
    let c2 = (SSIM_K2 * PIXEL_PEAK).powi(2);
    let (oh, ow) = (h - SSIM_WINDOW + 1, w - SSIM_WINDOW + 1);
    let mut total = 0.0;
    for oy in 0..oh {
        for ox in 0..ow {
            let (mut ma, mut mb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for ky in 0..SSIM_WINDOW {
                for kx in 0..SSIM_WINDOW {
                    let g = win[ky * SSIM_WINDOW + kx];
                    let i = (oy + ky) * w + ox + kx;
                    let (x, y) = (la[i], lb[i]);
                    ma += g * x;
                    mb += g * y;
                    saa += g * x * x;
                    sbb += g * y * y;
                    sab += g * x * y;
                }
            }
            let va = saa - ma * ma;
            let vb = sbb - mb * mb;
            let cov = sab - ma * mb;
            total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
        }
    }
    Ok(total / (oh * ow) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flat(c: usize, h: usize, w: usize, v: f32) -> Tensor<f32> {
        Tensor::full(&[c, h, w], v)
    }

    #[test]
    fn psnr_identical_is_capped() {
        let a = flat(3, 4, 4, 0.3);
        assert_eq!(psnr(&a, &a).unwrap(), PSNR_CAP);
    }

    #[test]
    fn psnr_uniform_sixteen() {
        let a = flat(3, 8, 8, 0.0);
        let b = flat(3, 8, 8, (16.0 / 255.0) as f32);
        assert!((psnr(&a, &b).unwrap() - 24.0487).abs() < 1e-3);
    }

    #[test]
    fn ssim_identical_is_one() {
        let a = Tensor::from_f64(&[1, 12, 12], &(0..144).map(|i| (i % 7) as f64 / 7.0).collect::<Vec<_>>()).unwrap();
        assert_eq!(ssim(&a, &a).unwrap(), 1.0);
    }

    #[test]
    fn ssim_small_image_is_config_error() {
        let a = flat(3, 10, 12, 0.5);
        assert!(matches!(ssim(&a, &a), Err(Error::Config(_))));
    }

    #[test]
    fn ssim_constant_shift_closed_form() {
        let a = flat(1, 11, 11, 0.2);
        let b = flat(1, 11, 11, 0.5);
        let (m1, m2) = (0.2f32 as f64 * 255.0, 0.5f32 as f64 * 255.0);
        let c1 = (0.01f64 * 255.0).powi(2);
        let expect = (2.0 * m1 * m2 + c1) / (m1 * m1 + m2 * m2 + c1);
        assert!((ssim(&a, &b).unwrap() - expect).abs() < 1e-9);
    }

    #[test]
    fn window_sums_to_one() {
        let s: f64 = gaussian_window().iter().sum();
        assert!((s - 1.0).abs() < 1e-12);
    }
}
