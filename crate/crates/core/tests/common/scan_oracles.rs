//! Brute-force references for the selective and cross-modal scans.

use dehazemamba_core::ssm::SsmParams;
use dehazemamba_core::{Graph, Tensor, Var};
use rand_chacha::ChaCha8Rng;

pub struct Raw {
    pub x: Tensor<f64>,
    pub delta: Tensor<f64>,
    pub a: Tensor<f64>,
    pub b: Tensor<f64>,
    pub c: Tensor<f64>,
    pub d: Tensor<f64>,
}

pub fn raw(rng: &mut ChaCha8Rng, batch: usize, len: usize, dim: usize, state: usize) -> Raw {
    Raw {
        x: Tensor::rand_uniform(&[batch, len, dim], -1.0, 1.0, rng),
        delta: Tensor::rand_uniform(&[batch, len, dim], 0.05, 1.0, rng),
        a: Tensor::rand_uniform(&[dim, state], -2.0, -0.1, rng),
        b: Tensor::rand_uniform(&[batch, len, state], -1.0, 1.0, rng),
        c: Tensor::rand_uniform(&[batch, len, state], -1.0, 1.0, rng),
        d: Tensor::rand_uniform(&[dim], -1.0, 1.0, rng),
    }
}

pub fn on_tape(g: &mut Graph<f64>, r: &Raw) -> (Var, SsmParams) {
    let x = g.constant(r.x.clone());
    let p = SsmParams {
        delta: g.constant(r.delta.clone()),
        a: g.constant(r.a.clone()),
        b_in: g.constant(r.b.clone()),
        c_out: g.constant(r.c.clone()),
        d_skip: g.constant(r.d.clone()),
    };
    (x, p)
}

/// Unrolled recurrence with an explicit per-step state, decoded with `c`.
pub fn brute_scan(r: &Raw, c: &[f64]) -> Vec<f64> {
    let [batch, len, dim] = [r.x.shape()[0], r.x.shape()[1], r.x.shape()[2]];
    let state = r.a.shape()[1];
    let mut y = vec![0.0; batch * len * dim];
    for bi in 0..batch {
        for di in 0..dim {
            let mut h = vec![0.0; state];
            for t in 0..len {
                let tok = bi * len + t;
                let dt = r.delta.data()[tok * dim + di];
                let xt = r.x.data()[tok * dim + di];
                let mut out = r.d.data()[di] * xt;
                for (n, hn) in h.iter_mut().enumerate() {
                    let a_bar = (dt * r.a.data()[di * state + n]).exp();
                    let b_bar = dt * r.b.data()[tok * state + n];
                    *hn = a_bar * *hn + b_bar * xt;
                    out += c[tok * state + n] * *hn;
                }
                y[tok * dim + di] = out;
            }
        }
    }
    y
}

pub fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

pub fn shapes() -> impl Iterator<Item = (usize, usize, usize, usize)> {
    (1..=2).flat_map(|b| (1..=4).flat_map(move |l| (1..=2).flat_map(move |d| (1..=2).map(move |n| (b, l, d, n)))))
}
