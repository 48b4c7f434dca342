//! Straight-from-the-definition PSNR and SSIM used to cross-check the library.

use dehazemamba_core::Tensor;

pub fn psnr_oracle(a: &Tensor<f32>, b: &Tensor<f32>) -> f64 {
    let mut sse = 0.0;
    for (x, y) in a.data().iter().zip(b.data()) {
        let d = 255.0 * *x as f64 - 255.0 * *y as f64;
        sse += d * d;
    }
    let mse = sse / a.numel() as f64;
    if mse == 0.0 {
        99.0
    } else {
        (10.0 * (255.0f64.powi(2) / mse).log10()).min(99.0)
    }
}

fn luma(img: &Tensor<f32>, y: usize, x: usize) -> f64 {
    let (h, w) = (img.shape()[1], img.shape()[2]);
    let px = |c: usize| img.data()[(c * h + y) * w + x] as f64;
    255.0 * (0.299 * px(0) + 0.587 * px(1) + 0.114 * px(2))
}

/// Per-window SSIM with two-pass weighted moments, averaged over all valid windows.
pub fn ssim_oracle(a: &Tensor<f32>, b: &Tensor<f32>) -> f64 {
    let (h, w) = (a.shape()[1], a.shape()[2]);
    let g1: Vec<f64> = (0..11).map(|i| (-((i as f64 - 5.0).powi(2)) / 4.5).exp()).collect();
    let norm: f64 = g1.iter().sum::<f64>().powi(2);
    let (c1, c2) = ((0.01f64 * 255.0).powi(2), (0.03f64 * 255.0).powi(2));
    let mut total = 0.0;
    let mut windows = 0;
    for oy in 0..=h - 11 {
        for ox in 0..=w - 11 {
            let cells: Vec<(f64, f64, f64)> = (0..121)
                .map(|k| {
                    let (ky, kx) = (k / 11, k % 11);
                    (g1[ky] * g1[kx] / norm, luma(a, oy + ky, ox + kx), luma(b, oy + ky, ox + kx))
                })
                .collect();
            let mu_a: f64 = cells.iter().map(|(g, x, _)| g * x).sum();
            let mu_b: f64 = cells.iter().map(|(g, _, y)| g * y).sum();
            let var_a: f64 = cells.iter().map(|(g, x, _)| g * (x - mu_a).powi(2)).sum();
            let var_b: f64 = cells.iter().map(|(g, _, y)| g * (y - mu_b).powi(2)).sum();
            let cov: f64 = cells.iter().map(|(g, x, y)| g * (x - mu_a) * (y - mu_b)).sum();
            total += (2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2)
                / ((mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2));
            windows += 1;
        }
    }
    total / windows as f64
}
