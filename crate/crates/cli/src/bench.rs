//! Wall-clock scaling of the selective scan against a quadratic attention yardstick.

use std::time::Instant;

use dehazemamba_core::kernels::dot;
use dehazemamba_core::ssm::kernel::{scan_forward, ScanDims};
use dehazemamba_core::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::BenchConfig;

#[derive(Clone, Debug, PartialEq)]
pub struct BenchRow {
    pub length: usize,
    pub scan_ms: f64,
    pub attn_ms: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
    pub scan_slope: f64,
    pub attn_slope: f64,
}

impl BenchReport {
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("length\tscan_ms\tattn_ms\n");
        for r in &self.rows {
            out += &format!("{}\t{:.4}\t{:.4}\n", r.length, r.scan_ms, r.attn_ms);
        }
        out += &format!("\nkernel\tslope\nscan\t{:.4}\nattention\t{:.4}\n", self.scan_slope, self.attn_slope);
        out
    }
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn loglog_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let lx: Vec<f64> = xs.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let cov: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let var: f64 = lx.iter().map(|x| (x - mx) * (x - mx)).sum();
    cov / var
}

/// Single-head softmax attention over `[L, D]` queries, keys and values,
/// materializing one `L`-long score row at a time.
pub fn naive_attention(q: &[f32], k: &[f32], v: &[f32], len: usize, dim: usize) -> Vec<f32> {
    let scale = 1.0 / (dim as f32).sqrt();
    let mut out = vec![0.0f32; len * dim];
    let mut scores = vec![0.0f32; len];
    for i in 0..len {
        let qi = &q[i * dim..(i + 1) * dim];
        let mut max = f32::NEG_INFINITY;
        for (j, s) in scores.iter_mut().enumerate() {
            *s = dot(qi, &k[j * dim..(j + 1) * dim]) * scale;
            max = max.max(*s);
        }
        let mut total = 0.0;
        for s in &mut scores {
            *s = (*s - max).exp();
            total += *s;
        }
        let o = &mut out[i * dim..(i + 1) * dim];
        for (j, &s) in scores.iter().enumerate() {
            let w = s / total;
            for (ov, &vv) in o.iter_mut().zip(&v[j * dim..(j + 1) * dim]) {
                *ov += w * vv;
            }
        }
    }
    out
}

fn median_ms(cfg: &BenchConfig, mut f: impl FnMut() -> f32) -> f64 {
    let mut sink = 0.0f32;
    for _ in 0..cfg.warmup {
        sink += f();
    }
    let mut times: Vec<f64> = (0..cfg.repetitions)
        .map(|_| {
            let t = Instant::now();
            sink += f();
            t.elapsed().as_secs_f64() * 1e3
        })
        .collect();
    std::hint::black_box(sink);
    times.sort_by(f64::total_cmp);
    times[times.len() / 2]
}

fn uniform(rng: &mut ChaCha8Rng, n: usize, lo: f32, hi: f32) -> Vec<f32> {
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

pub fn run(cfg: &BenchConfig) -> Result<BenchReport> {
    cfg.validate()?;
    let (dim, state) = (cfg.dim, cfg.state);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let a: Vec<f32> = (0..dim * state).map(|i| -((i % state) as f32 + 1.0)).collect();
    let d = vec![1.0f32; dim];
    let mut rows = Vec::new();
    for &len in &cfg.lengths {
        let x = uniform(&mut rng, len * dim, -1.0, 1.0);
        let delta = uniform(&mut rng, len * dim, 1e-3, 0.1);
        let b = uniform(&mut rng, len * state, -1.0, 1.0);
        let c = uniform(&mut rng, len * state, -1.0, 1.0);
        let dims = ScanDims {
            batch: 1,
            len,
            dim,
            state,
        };
        let scan_ms = median_ms(cfg, || scan_forward(&x, &delta, &a, &b, &c, &d, dims, None)[len * dim - 1]);
        let q = uniform(&mut rng, len * dim, -1.0, 1.0);
        let k = uniform(&mut rng, len * dim, -1.0, 1.0);
        let attn_ms = median_ms(cfg, || naive_attention(&q, &k, &x, len, dim)[len * dim - 1]);
        rows.push(BenchRow {
            length: len,
            scan_ms,
            attn_ms,
        });
    }
    let ls: Vec<f64> = rows.iter().map(|r| r.length as f64).collect();
    let scan: Vec<f64> = rows.iter().map(|r| r.scan_ms).collect();
    let attn: Vec<f64> = rows.iter().map(|r| r.attn_ms).collect();
    Ok(BenchReport {
        scan_slope: loglog_slope(&ls, &scan),
        attn_slope: loglog_slope(&ls, &attn),
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slope_of_power_law() {
        let xs = [1.0, 2.0, 4.0, 8.0];
        let ys: Vec<f64> = xs.iter().map(|x: &f64| 3.0 * x.powf(1.5)).collect();
        assert!((loglog_slope(&xs, &ys) - 1.5).abs() < 1e-12);
    }

    #[test]
    fn attention_rows_average_values() {
        // identical keys give uniform weights, so every output is the mean value row
        let (len, dim) = (3, 2);
        let q = vec![0.3; len * dim];
        let k = vec![1.0; len * dim];
        let v = vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0];
        let out = naive_attention(&q, &k, &v, len, dim);
        for row in out.chunks(dim) {
            assert!((row[0] - 2.0).abs() < 1e-6 && (row[1] - 3.0).abs() < 1e-6);
        }
    }
}
