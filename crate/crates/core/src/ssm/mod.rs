//! Selective state-space scans: discretization, the sequential recurrence,
//! the four-direction 2-D scan and the cross-modal difference scan.

pub mod kernel;

use crate::error::{Error, Result};
use crate::graph::{Graph, Op, Var};
use crate::tensor::{Scalar, Tensor};

pub use kernel::ScanDims;

/// Per-modality scan parameters living on a tape.
///
/// `delta: [B, L, D]`, `a: [D, N]`, `b_in: [B, L, N]`, `c_out: [B, L, N]`, `d_skip: [D]`.
#[derive(Clone, Copy, Debug)]
pub struct SsmParams {
    pub delta: Var,
    pub a: Var,
    pub b_in: Var,
    pub c_out: Var,
    pub d_skip: Var,
}

impl SsmParams {
    pub fn with_c(self, c_out: Var) -> Self {
        Self { c_out, ..self }
    }
}

fn check_delta<S: Scalar>(delta: &[S]) -> Result<()> {
    match delta.iter().find(|v| !(**v >= S::zero())) {
        Some(bad) => Err(Error::Domain(format!(
            "step size must be non-negative (softplus-parametrized), found {bad}"
        ))),
        None => Ok(()),
    }
}

/// Discretized state matrices `(a_bar, b_bar)`, both `[B, L, D, N]`:
/// `a_bar = exp(delta * a)`, `b_bar = delta * b_in`.
pub fn discretize<S: Scalar>(delta: &Tensor<S>, a: &Tensor<S>, b_in: &Tensor<S>) -> Result<(Tensor<S>, Tensor<S>)> {
    let ds = delta.shape();
    if ds.len() != 3 || a.rank() != 2 || a.shape()[0] != ds[2] || b_in.shape() != [ds[0], ds[1], a.shape()[1]] {
        return Err(Error::shape("discretize", ds, a.shape()));
    }
    check_delta(delta.data())?;
    let (batch, len, dim, state) = (ds[0], ds[1], ds[2], a.shape()[1]);
    let mut a_bar = Vec::with_capacity(batch * len * dim * state);
    let mut b_bar = Vec::with_capacity(batch * len * dim * state);
    for tok in 0..batch * len {
        for di in 0..dim {
            let dt = delta.data()[tok * dim + di];
            for n in 0..state {
                a_bar.push((dt * a.data()[di * state + n]).exp());
                b_bar.push(dt * b_in.data()[tok * state + n]);
            }
        }
    }
    let shape = [batch, len, dim, state];
    Ok((Tensor::new(&shape, a_bar)?, Tensor::new(&shape, b_bar)?))
}

fn scan_dims<S: Scalar>(g: &Graph<S>, x: Var, p: &SsmParams) -> Result<ScanDims> {
    let xs = g.shape(x);
    if xs.len() != 3 {
        return Err(Error::shape("selective_scan", xs, g.shape(p.delta)));
    }
    let (batch, len, dim) = (xs[0], xs[1], xs[2]);
    let a = g.shape(p.a);
    if a.len() != 2 || a[0] != dim {
        return Err(Error::shape("selective_scan a", xs, a));
    }
    let state = a[1];
    if g.shape(p.delta) != xs {
        return Err(Error::shape("selective_scan delta", xs, g.shape(p.delta)));
    }
    for v in [p.b_in, p.c_out] {
        if g.shape(v) != [batch, len, state] {
            return Err(Error::shape("selective_scan b/c", &[batch, len, state], g.shape(v)));
        }
    }
    if g.shape(p.d_skip) != [dim] {
        return Err(Error::shape("selective_scan d", &[dim], g.shape(p.d_skip)));
    }
    Ok(ScanDims {
        batch,
        len,
        dim,
        state,
    })
}

/// Selective scan of `x: [B, L, D]` with zero initial state. Linear in `L`.
pub fn selective_scan<S: Scalar>(g: &mut Graph<S>, x: Var, p: &SsmParams) -> Result<Var> {
    let dims = scan_dims(g, x, p)?;
    check_delta(g.value(p.delta).data())?;
    let deps = [x, p.delta, p.a, p.b_in, p.c_out, p.d_skip];
    let rg = g.any_grad(&deps);
    let cells = if rg {
        dims.batch * dims.len * dims.dim * dims.state
    } else {
        0
    };
    let mut states = vec![S::zero(); cells];
    let mut decays = vec![S::zero(); cells];
    let y = kernel::scan_forward(
        g.value(x).data(),
        g.value(p.delta).data(),
        g.value(p.a).data(),
        g.value(p.b_in).data(),
        g.value(p.c_out).data(),
        g.value(p.d_skip).data(),
        dims,
        rg.then_some((&mut states[..], &mut decays[..])),
    );
    let value = Tensor::new(&[dims.batch, dims.len, dims.dim], y)?;
    Ok(g.push(
        value,
        Op::Scan {
            x,
            delta: p.delta,
            a: p.a,
            b: p.b_in,
            c: p.c_out,
            d: p.d_skip,
            dims,
            states,
            decays,
        },
        rg,
    ))
}

/// Cross-modal difference scan: both modalities are decoded with the shared
/// matrix `|c_rgb - c_sar|` and the output is `|y_rgb - y_sar|`.
pub fn css2d<S: Scalar>(
    g: &mut Graph<S>,
    x_rgb: Var,
    x_sar: Var,
    p_rgb: &SsmParams,
    p_sar: &SsmParams,
) -> Result<Var> {
    if g.shape(x_rgb) != g.shape(x_sar) {
        return Err(Error::Alignment {
            optical: g.shape(x_rgb).to_vec(),
            sar: g.shape(x_sar).to_vec(),
        });
    }
    if g.shape(p_rgb.a) != g.shape(p_sar.a) || g.shape(p_rgb.c_out) != g.shape(p_sar.c_out) {
        return Err(Error::Alignment {
            optical: g.shape(p_rgb.c_out).to_vec(),
            sar: g.shape(p_sar.c_out).to_vec(),
        });
    }
    let diff = g.sub(p_rgb.c_out, p_sar.c_out)?;
    let shared = g.abs(diff);
    let y_rgb = selective_scan(g, x_rgb, &p_rgb.with_c(shared))?;
    let y_sar = selective_scan(g, x_sar, &p_sar.with_c(shared))?;
    let d = g.sub(y_rgb, y_sar)?;
    Ok(g.abs(d))
}

/// Flattening order of an `H x W` grid into a token sequence.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ScanOrder {
    RowMajor,
    RowMajorReversed,
    ColumnMajor,
    ColumnMajorReversed,
}

impl ScanOrder {
    pub const ALL: [ScanOrder; 4] = [
        ScanOrder::RowMajor,
        ScanOrder::RowMajorReversed,
        ScanOrder::ColumnMajor,
        ScanOrder::ColumnMajorReversed,
    ];

    /// Row-major spatial offset of the `t`-th token.
    pub fn position(self, t: usize, h: usize, w: usize) -> usize {
        let n = h * w;
        match self {
            ScanOrder::RowMajor => t,
            ScanOrder::RowMajorReversed => n - 1 - t,
            ScanOrder::ColumnMajor => (t % h) * w + t / h,
            ScanOrder::ColumnMajorReversed => {
                let t = n - 1 - t;
                (t % h) * w + t / h
            }
        }
    }
}

/// `[B, C, H, W] -> [B, H*W, C]` in the given order.
pub fn to_sequence<S: Scalar>(g: &mut Graph<S>, x: Var, order: ScanOrder) -> Result<Var> {
    let s = g.shape(x).to_vec();
    if s.len() != 4 {
        return Err(Error::shape("to_sequence", &s, &[0, 0, 0, 0]));
    }
    let (batch, ch, h, w) = (s[0], s[1], s[2], s[3]);
    let len = h * w;
    let mut index = Vec::with_capacity(batch * len * ch);
    for b in 0..batch {
        for t in 0..len {
            let pos = order.position(t, h, w);
            for c in 0..ch {
                index.push((b * ch + c) * len + pos);
            }
        }
    }
    g.gather(x, index, &[batch, len, ch])
}

/// Inverse of [`to_sequence`].
pub fn from_sequence<S: Scalar>(g: &mut Graph<S>, y: Var, order: ScanOrder, h: usize, w: usize) -> Result<Var> {
    let s = g.shape(y).to_vec();
    if s.len() != 3 || s[1] != h * w {
        return Err(Error::shape("from_sequence", &s, &[h, w]));
    }
    let (batch, len, ch) = (s[0], s[1], s[2]);
    let mut inverse = vec![0usize; len];
    for t in 0..len {
        inverse[order.position(t, h, w)] = t;
    }
    let mut index = Vec::with_capacity(batch * len * ch);
    for b in 0..batch {
        for c in 0..ch {
            for &t in &inverse {
                index.push((b * len + t) * ch + c);
            }
        }
    }
    g.gather(y, index, &[batch, ch, h, w])
}

/// Four-direction 2-D scan: each direction flattens `x: [B, C, H, W]`, obtains
/// its parameters from `project(graph, direction, sequence)`, scans, and the
/// un-flattened outputs are summed.
pub fn ss2d<S, F>(g: &mut Graph<S>, x: Var, mut project: F) -> Result<Var>
where
    S: Scalar,
    F: FnMut(&mut Graph<S>, usize, Var) -> Result<SsmParams>,
{
    let s = g.shape(x).to_vec();
    if s.len() != 4 {
        return Err(Error::shape("ss2d", &s, &[0, 0, 0, 0]));
    }
    let (h, w) = (s[2], s[3]);
    let mut total: Option<Var> = None;
    for (k, order) in ScanOrder::ALL.into_iter().enumerate() {
        let seq = to_sequence(g, x, order)?;
        let params = project(g, k, seq)?;
        let y = selective_scan(g, seq, &params)?;
        let img = from_sequence(g, y, order, h, w)?;
        total = Some(match total {
            Some(acc) => g.add(acc, img)?,
            None => img,
        });
    }
    Ok(total.expect("four directions"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn orders_are_permutations() {
        for (h, w) in [(1, 1), (2, 3), (4, 4), (3, 1)] {
            for order in ScanOrder::ALL {
                let mut seen = vec![false; h * w];
                for t in 0..h * w {
                    let p = order.position(t, h, w);
                    assert!(!seen[p]);
                    seen[p] = true;
                }
            }
        }
    }

    #[test]
    fn column_major_walks_columns() {
        let pos: Vec<_> = (0..6).map(|t| ScanOrder::ColumnMajor.position(t, 2, 3)).collect();
        assert_eq!(pos, vec![0, 3, 1, 4, 2, 5]);
    }

    #[test]
    fn negative_delta_is_domain_error() {
        let delta = Tensor::<f64>::full(&[1, 1, 1], -0.1);
        let a = Tensor::full(&[1, 1], -1.0);
        let b = Tensor::full(&[1, 1, 1], 1.0);
        assert!(matches!(discretize(&delta, &a, &b), Err(Error::Domain(_))));
    }

    #[test]
    fn discretize_reference_values() {
        let a = Tensor::<f64>::full(&[1, 1], -1.0);
        let b = Tensor::full(&[1, 1, 1], 2.0);
        let (ab, bb) = discretize(&Tensor::full(&[1, 1, 1], 0.0), &a, &b).unwrap();
        assert_eq!(ab.data(), &[1.0]);
        assert_eq!(bb.data(), &[0.0]);
        let (ab, _) = discretize(&Tensor::full(&[1, 1, 1], 0.1), &a, &b).unwrap();
        assert!((ab.data()[0] - 0.9048374180359595).abs() < 1e-12);
        let (_, bb) = discretize(&Tensor::full(&[1, 1, 1], 0.5), &a, &b).unwrap();
        assert_eq!(bb.data(), &[1.0]);
    }

    #[test]
    fn empty_sequence_scans_to_empty_output() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::zeros(&[1, 0, 2]));
        let p = SsmParams {
            delta: g.constant(Tensor::zeros(&[1, 0, 2])),
            a: g.constant(Tensor::full(&[2, 3], -1.0)),
            b_in: g.constant(Tensor::zeros(&[1, 0, 3])),
            c_out: g.constant(Tensor::zeros(&[1, 0, 3])),
            d_skip: g.constant(Tensor::ones(&[2])),
        };
        let y = selective_scan(&mut g, x, &p).unwrap();
        assert_eq!(g.shape(y), &[1, 0, 2]);
    }
}
