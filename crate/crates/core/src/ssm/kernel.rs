//! Sequential selective-scan recurrence on flat row-major buffers.
//!
//! Layouts: `x`, `delta`, `y` are `[B, L, D]`; `b`, `c` are `[B, L, N]`;
//! `a` is `[D, N]`; `d` is `[D]`; saved states are `[B, L, D, N]`.

use crate::tensor::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ScanDims {
    pub batch: usize,
    pub len: usize,
    pub dim: usize,
    pub state: usize,
}

/// Runs `h_t = exp(delta_t a) h_{t-1} + delta_t b_t x_t`, `y_t = c_t . h_t + d x_t`.
/// When `saved` is given it receives every `h_t` and every `exp(delta_t a)`.
#[allow(clippy::too_many_arguments)]
pub fn scan_forward<S: Scalar>(
    x: &[S],
    delta: &[S],
    a: &[S],
    b: &[S],
    c: &[S],
    d: &[S],
    dims: ScanDims,
    mut saved: Option<(&mut [S], &mut [S])>,
) -> Vec<S> {
    let ScanDims {
        batch,
        len,
        dim,
        state,
    } = dims;
    let mut y = vec![S::zero(); batch * len * dim];
    let mut h = vec![S::zero(); dim * state];
    let mut decay = vec![S::zero(); dim * state];
    for bi in 0..batch {
        h.fill(S::zero());
        for t in 0..len {
            let tok = bi * len + t;
            let bt = &b[tok * state..(tok + 1) * state];
            let ct = &c[tok * state..(tok + 1) * state];
            for di in 0..dim {
                let xi = x[tok * dim + di];
                let dt = delta[tok * dim + di];
                let dtx = dt * xi;
                let ar = &a[di * state..(di + 1) * state];
                let hr = &mut h[di * state..(di + 1) * state];
                let dr = &mut decay[di * state..(di + 1) * state];
                let mut acc = S::zero();
                for n in 0..state {
                    let ab = (dt * ar[n]).exp();
                    dr[n] = ab;
                    let hv = ab * hr[n] + dtx * bt[n];
                    hr[n] = hv;
                    acc += ct[n] * hv;
                }
                y[tok * dim + di] = acc + d[di] * xi;
            }
            if let Some((st, dc)) = saved.as_mut() {
                let range = tok * dim * state..(tok + 1) * dim * state;
                st[range.clone()].copy_from_slice(&h);
                dc[range].copy_from_slice(&decay);
            }
        }
    }
    y
}

/// Gradients `(x, delta, a, b, c, d)` of the scan given the saved states and
/// decays of [`scan_forward`] and `grad_y`.
#[allow(clippy::too_many_arguments)]
pub fn scan_backward<S: Scalar>(
    x: &[S],
    delta: &[S],
    a: &[S],
    b: &[S],
    c: &[S],
    d: &[S],
    states: &[S],
    decays: &[S],
    grad_y: &[S],
    dims: ScanDims,
) -> [Vec<S>; 6] {
    let ScanDims {
        batch,
        len,
        dim,
        state,
    } = dims;
    let mut gx = vec![S::zero(); x.len()];
    let mut gdelta = vec![S::zero(); delta.len()];
    let mut ga = vec![S::zero(); a.len()];
    let mut gb = vec![S::zero(); b.len()];
    let mut gc = vec![S::zero(); c.len()];
    let mut gd = vec![S::zero(); d.len()];
    // carried dL/dh_t
    let mut dh = vec![S::zero(); dim * state];
    for bi in 0..batch {
        dh.fill(S::zero());
        for t in (0..len).rev() {
            let tok = bi * len + t;
            let bt = &b[tok * state..(tok + 1) * state];
            let ct = &c[tok * state..(tok + 1) * state];
            let h_t = &states[tok * dim * state..(tok + 1) * dim * state];
            let ab_t = &decays[tok * dim * state..(tok + 1) * dim * state];
            let h_prev = (t > 0).then(|| &states[(tok - 1) * dim * state..tok * dim * state]);
            for di in 0..dim {
                let i = tok * dim + di;
                let (xi, dt, gy) = (x[i], delta[i], grad_y[i]);
                gd[di] += gy * xi;
                let mut gxi = gy * d[di];
                let mut gdt = S::zero();
                let ar = &a[di * state..(di + 1) * state];
                for n in 0..state {
                    let k = di * state + n;
                    gc[tok * state + n] += gy * h_t[k];
                    let g = dh[k] + gy * ct[n];
                    let ab = ab_t[k];
                    let hp = h_prev.map_or(S::zero(), |p| p[k]);
                    let g_ab = g * hp * ab;
                    gdt += g_ab * ar[n] + g * bt[n] * xi;
                    ga[k] += g_ab * dt;
                    gb[tok * state + n] += g * dt * xi;
                    gxi += g * dt * bt[n];
                    dh[k] = g * ab;
                }
                gx[i] = gxi;
                gdelta[i] = gdt;
            }
        }
    }
    [gx, gdelta, ga, gb, gc, gd]
}
