//! Procedural overhead scenes and a SAR-like companion channel.

use rand::Rng;
use rand_distr::{Distribution, Gamma};

use crate::data::metrics::LUMA;
use crate::data::noise::value_noise;
use crate::tensor::Tensor;

/// Terrain palette (RGB) blended by a noise field: water, vegetation, soil, bare rock.
const PALETTE: [[f64; 3]; 4] = [
    [0.05, 0.10, 0.16],
    [0.10, 0.22, 0.09],
    [0.30, 0.25, 0.16],
    [0.42, 0.40, 0.36],
];

fn palette(t: f64) -> [f64; 3] {
    let s = t.clamp(0.0, 1.0) * (PALETTE.len() - 1) as f64;
    let i = (s.floor() as usize).min(PALETTE.len() - 2);
    let f = s - i as f64;
    let mut c = [0.0; 3];
    for k in 0..3 {
        c[k] = PALETTE[i][k] * (1.0 - f) + PALETTE[i + 1][k] * f;
    }
    c
}

/// Clear optical scene `[3, H, W]`: smooth terrain, rectangular parcels and roads.
pub fn clear_scene<R: Rng + ?Sized>(h: usize, w: usize, rng: &mut R) -> Tensor<f32> {
    let plane = h * w;
    let terrain = value_noise(h, w, (h.max(w) as f64 / 2.0).max(2.0), 3, rng);
    let texture = value_noise(h, w, 2.0, 2, rng);
    let mut rgb = vec![[0.0f64; 3]; plane];
    for i in 0..plane {
        let c = palette(terrain[i]);
        let tex = 0.85 + 0.3 * texture[i];
        rgb[i] = [c[0] * tex, c[1] * tex, c[2] * tex];
    }
    let parcels = rng.random_range(2..=5);
    for _ in 0..parcels {
        let ph = rng.random_range(2..=(h / 3).max(2));
        let pw = rng.random_range(2..=(w / 3).max(2));
        let y0 = rng.random_range(0..h.saturating_sub(ph).max(1));
        let x0 = rng.random_range(0..w.saturating_sub(pw).max(1));
        let tone: [f64; 3] = if rng.random::<bool>() {
            [0.45, 0.42, 0.40]
        } else {
            [0.16, 0.30, 0.12]
        };
        for y in y0..(y0 + ph).min(h) {
            for x in x0..(x0 + pw).min(w) {
                rgb[y * w + x] = tone;
            }
        }
    }
    let roads = rng.random_range(1..=2);
    for _ in 0..roads {
        let tone = [0.38, 0.37, 0.35];
        if rng.random::<bool>() {
            let y = rng.random_range(0..h);
            for x in 0..w {
                rgb[y * w + x] = tone;
            }
        } else {
            let x = rng.random_range(0..w);
            for y in 0..h {
                rgb[y * w + x] = tone;
            }
        }
    }
    let mut data = vec![0.0f32; 3 * plane];
    for (i, px) in rgb.iter().enumerate() {
        for k in 0..3 {
            data[k * plane + i] = px[k].clamp(0.0, 1.0) as f32;
        }
    }
    Tensor::new(&[3, h, w], data).expect("shape matches data")
}

/// SAR-like channel `[1, H, W]`: a backscatter base from scene brightness plus
/// the Sobel edge response of the luminance, under multiplicative gamma speckle.
pub fn sar_from_clear<R: Rng + ?Sized>(clear: &Tensor<f32>, rng: &mut R) -> Tensor<f32> {
    let (h, w) = (clear.shape()[1], clear.shape()[2]);
    let plane = h * w;
    let d = clear.data();
    let luma: Vec<f64> = (0..plane)
        .map(|i| LUMA[0] * d[i] as f64 + LUMA[1] * d[plane + i] as f64 + LUMA[2] * d[2 * plane + i] as f64)
        .collect();
    let at = |y: isize, x: isize| -> f64 {
        let yy = y.clamp(0, h as isize - 1) as usize;
        let xx = x.clamp(0, w as isize - 1) as usize;
        luma[yy * w + xx]
    };
    let looks = 8.0;
    let speckle = Gamma::new(looks, 1.0 / looks).expect("valid gamma");
    let mut out = Vec::with_capacity(plane);
    for y in 0..h as isize {
        for x in 0..w as isize {
            let gx = at(y - 1, x + 1) + 2.0 * at(y, x + 1) + at(y + 1, x + 1)
                - at(y - 1, x - 1)
                - 2.0 * at(y, x - 1)
                - at(y + 1, x - 1);
            let gy = at(y + 1, x - 1) + 2.0 * at(y + 1, x) + at(y + 1, x + 1)
                - at(y - 1, x - 1)
                - 2.0 * at(y - 1, x)
                - at(y - 1, x + 1);
            let edge = (gx * gx + gy * gy).sqrt();
            let base = 0.15 + 0.6 * at(y, x);
            let v = (base + 0.8 * edge) * speckle.sample(rng);
            out.push(v.clamp(0.0, 1.0) as f32);
        }
    }
    Tensor::new(&[1, h, w], out).expect("shape matches data")
}
