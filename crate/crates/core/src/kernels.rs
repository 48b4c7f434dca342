//! Raw numeric kernels shared by the forward and backward passes of the tape.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::tensor::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvSpec {
    pub stride: usize,
    pub padding: usize,
    pub groups: usize,
}

impl Default for ConvSpec {
    fn default() -> Self {
        Self {
            stride: 1,
            padding: 0,
            groups: 1,
        }
    }
}

/// Extents of a 2-D convolution, resolved from the input and weight shapes.
#[derive(Clone, Copy, Debug)]
pub struct ConvGeom {
    pub batch: usize,
    pub c_in: usize,
    pub c_out: usize,
    pub h: usize,
    pub w: usize,
    pub k: usize,
    pub h_out: usize,
    pub w_out: usize,
    pub spec: ConvSpec,
}

impl ConvGeom {
    pub fn resolve(x: &[usize], weight: &[usize], spec: ConvSpec) -> Result<Self> {
        if x.len() != 4 || weight.len() != 4 {
            return Err(Error::shape("conv2d", x, weight));
        }
        let (batch, c_in, h, w) = (x[0], x[1], x[2], x[3]);
        let (c_out, c_per_group, k, k2) = (weight[0], weight[1], weight[2], weight[3]);
        if spec.groups == 0 || spec.stride == 0 {
            return Err(Error::Config("conv2d: groups and stride must be positive".into()));
        }
        if k != k2 || k % 2 == 0 {
            return Err(Error::Config(format!("conv2d: kernel must be square and odd, got {k}x{k2}")));
        }
        if c_in % spec.groups != 0 || c_out % spec.groups != 0 || c_in / spec.groups != c_per_group {
            return Err(Error::shape("conv2d", x, weight));
        }
        let span_h = h + 2 * spec.padding;
        let span_w = w + 2 * spec.padding;
        if span_h < k || span_w < k {
            return Err(Error::Config(format!(
                "conv2d: kernel {k} larger than padded input {span_h}x{span_w}"
            )));
        }
        if (span_h - k) % spec.stride != 0 || (span_w - k) % spec.stride != 0 {
            return Err(Error::Config(format!(
                "conv2d: output extent of {h}x{w} with kernel {k}, stride {}, padding {} is not integral",
                spec.stride, spec.padding
            )));
        }
        Ok(Self {
            batch,
            c_in,
            c_out,
            h,
            w,
            k,
            h_out: (span_h - k) / spec.stride + 1,
            w_out: (span_w - k) / spec.stride + 1,
            spec,
        })
    }

    pub fn out_shape(&self) -> Vec<usize> {
        vec![self.batch, self.c_out, self.h_out, self.w_out]
    }

    /// Range of output positions whose input coordinate `o*stride + kk - padding` lies in `0..extent`.
    #[inline]
    fn valid_range(&self, kk: usize, extent: usize, out_extent: usize) -> (usize, usize) {
        let s = self.spec.stride;
        let p = self.spec.padding;
        // o*s + kk >= p
        let lo = if kk >= p { 0 } else { (p - kk).div_ceil(s) };
        // o*s + kk - p <= extent - 1
        let hi = if extent + p > kk {
            ((extent + p - kk - 1) / s + 1).min(out_extent)
        } else {
            0
        };
        (lo, hi.max(lo))
    }
}

/// Dot product with independent partial sums so the loop vectorizes.
#[inline]
pub fn dot<S: Scalar>(a: &[S], b: &[S]) -> S {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [S::zero(); 8];
    let mut ca = a.chunks_exact(8);
    let mut cb = b.chunks_exact(8);
    for (x, y) in (&mut ca).zip(&mut cb) {
        for l in 0..8 {
            acc[l] += x[l] * y[l];
        }
    }
    let mut tail = S::zero();
    for (&x, &y) in ca.remainder().iter().zip(cb.remainder()) {
        tail += x * y;
    }
    acc.iter().copied().sum::<S>() + tail
}

/// Visits the convolution as runs of `count` outputs starting at `out_start`
/// that read `x[x_start + j * stride]` with the single weight `w_idx`.
#[inline]
fn conv_for_each<F>(geo: &ConvGeom, mut f: F)
where
    F: FnMut(usize, usize, usize, usize),
{
    let cpg_in = geo.c_in / geo.spec.groups;
    let cpg_out = geo.c_out / geo.spec.groups;
    let (k, s, p) = (geo.k, geo.spec.stride, geo.spec.padding);
    let pointwise = k == 1 && s == 1 && p == 0;
    for b in 0..geo.batch {
        for co in 0..geo.c_out {
            let g = co / cpg_out;
            for cig in 0..cpg_in {
                let ci = g * cpg_in + cig;
                let x_plane = (b * geo.c_in + ci) * geo.h * geo.w;
                let out_plane = (b * geo.c_out + co) * geo.h_out * geo.w_out;
                if pointwise {
                    f(x_plane, co * cpg_in + cig, out_plane, geo.h * geo.w);
                    continue;
                }
                for ky in 0..k {
                    let (oy_lo, oy_hi) = geo.valid_range(ky, geo.h, geo.h_out);
                    for kx in 0..k {
                        let (ox_lo, ox_hi) = geo.valid_range(kx, geo.w, geo.w_out);
                        if ox_lo >= ox_hi {
                            continue;
                        }
                        let w_idx = ((co * cpg_in + cig) * k + ky) * k + kx;
                        for oy in oy_lo..oy_hi {
                            let iy = oy * s + ky - p;
                            let x_start = x_plane + iy * geo.w + ox_lo * s + kx - p;
                            f(x_start, w_idx, out_plane + oy * geo.w_out + ox_lo, ox_hi - ox_lo);
                        }
                    }
                }
            }
        }
    }
}

pub fn conv2d_forward<S: Scalar>(x: &[S], weight: &[S], bias: Option<&[S]>, geo: &ConvGeom) -> Vec<S> {
    let plane = geo.h_out * geo.w_out;
    let mut out = vec![S::zero(); geo.batch * geo.c_out * plane];
    if let Some(bias) = bias {
        for (i, chunk) in out.chunks_mut(plane).enumerate() {
            chunk.fill(bias[i % geo.c_out]);
        }
    }
    let s = geo.spec.stride;
    conv_for_each(geo, |x_start, w_idx, out_start, count| {
        let wv = weight[w_idx];
        let o = &mut out[out_start..out_start + count];
        if s == 1 {
            for (ov, &xv) in o.iter_mut().zip(&x[x_start..x_start + count]) {
                *ov += wv * xv;
            }
        } else {
            for (j, ov) in o.iter_mut().enumerate() {
                *ov += wv * x[x_start + j * s];
            }
        }
    });
    out
}

/// Returns (grad_x, grad_weight, grad_bias).
pub fn conv2d_backward<S: Scalar>(
    x: &[S],
    weight: &[S],
    grad_out: &[S],
    geo: &ConvGeom,
) -> (Vec<S>, Vec<S>, Vec<S>) {
    let mut gx = vec![S::zero(); x.len()];
    let mut gw = vec![S::zero(); weight.len()];
    let plane = geo.h_out * geo.w_out;
    let mut gb = vec![S::zero(); geo.c_out];
    for (i, chunk) in grad_out.chunks(plane).enumerate() {
        gb[i % geo.c_out] += chunk.iter().copied().sum::<S>();
    }
    let s = geo.spec.stride;
    conv_for_each(geo, |x_start, w_idx, out_start, count| {
        let wv = weight[w_idx];
        let g = &grad_out[out_start..out_start + count];
        let mut acc = S::zero();
        if s == 1 {
            acc = dot(g, &x[x_start..x_start + count]);
            for (gxv, &gv) in gx[x_start..x_start + count].iter_mut().zip(g) {
                *gxv += gv * wv;
            }
        } else {
            for (j, &gv) in g.iter().enumerate() {
                let xi = x_start + j * s;
                acc += gv * x[xi];
                gx[xi] += gv * wv;
            }
        }
        gw[w_idx] += acc;
    });
    (gx, gw, gb)
}

/// `out[m, j] = sum_i x[m, i] * w[i, j] (+ b[j])`.
pub fn matmul_bias<S: Scalar>(x: &[S], w: &[S], bias: Option<&[S]>, rows: usize, d_in: usize, d_out: usize) -> Vec<S> {
    let mut out = vec![S::zero(); rows * d_out];
    for m in 0..rows {
        let o = &mut out[m * d_out..(m + 1) * d_out];
        if let Some(b) = bias {
            o.copy_from_slice(b);
        }
        for i in 0..d_in {
            let xv = x[m * d_in + i];
            if xv == S::zero() {
                continue;
            }
            let wr = &w[i * d_out..(i + 1) * d_out];
            for (ov, &wv) in o.iter_mut().zip(wr) {
                *ov += xv * wv;
            }
        }
    }
    out
}

/// Returns (grad_x, grad_w, grad_b).
pub fn matmul_bias_backward<S: Scalar>(
    x: &[S],
    w: &[S],
    grad_out: &[S],
    rows: usize,
    d_in: usize,
    d_out: usize,
) -> (Vec<S>, Vec<S>, Vec<S>) {
    let mut gx = vec![S::zero(); rows * d_in];
    let mut gw = vec![S::zero(); d_in * d_out];
    let mut gb = vec![S::zero(); d_out];
    for m in 0..rows {
        let g = &grad_out[m * d_out..(m + 1) * d_out];
        for (b, &gv) in gb.iter_mut().zip(g) {
            *b += gv;
        }
        for i in 0..d_in {
            let wr = &w[i * d_out..(i + 1) * d_out];
            gx[m * d_in + i] = dot(wr, g);
            let xv = x[m * d_in + i];
            if xv != S::zero() {
                let gwr = &mut gw[i * d_out..(i + 1) * d_out];
                for (gwv, &gv) in gwr.iter_mut().zip(g) {
                    *gwv += xv * gv;
                }
            }
        }
    }
    (gx, gw, gb)
}

pub fn is_pow2(n: usize) -> bool {
    n > 0 && n & (n - 1) == 0
}

/// Unnormalized 2-D DFT over the trailing two axes of `planes` stacked `h x w` planes.
/// `inverse` selects the positive exponent (still unnormalized).
pub fn fft2_planes<S: Scalar>(data: &mut [Complex<S>], h: usize, w: usize, inverse: bool) {
    let mut planner = FftPlanner::<S>::new();
    let (row, col) = if inverse {
        (planner.plan_fft_inverse(w), planner.plan_fft_inverse(h))
    } else {
        (planner.plan_fft_forward(w), planner.plan_fft_forward(h))
    };
    let mut column = vec![Complex::new(S::zero(), S::zero()); h];
    for plane in data.chunks_mut(h * w) {
        row.process(plane);
        for x in 0..w {
            for y in 0..h {
                column[y] = plane[y * w + x];
            }
            col.process(&mut column);
            for y in 0..h {
                plane[y * w + x] = column[y];
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn valid_range_matches_bruteforce() {
        for stride in 1..=2 {
            for padding in 0..=2 {
                for h in 3..=7 {
                    let spec = ConvSpec {
                        stride,
                        padding,
                        groups: 1,
                    };
                    let Ok(geo) = ConvGeom::resolve(&[1, 1, h, h], &[1, 1, 3, 3], spec) else {
                        continue;
                    };
                    for kk in 0..3 {
                        let (lo, hi) = geo.valid_range(kk, h, geo.h_out);
                        for o in 0..geo.h_out {
                            let i = (o * stride + kk) as isize - padding as isize;
                            let inside = i >= 0 && (i as usize) < h;
                            assert_eq!(inside, o >= lo && o < hi, "o={o} kk={kk} h={h}");
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn non_integral_output_is_config_error() {
        let spec = ConvSpec {
            stride: 2,
            padding: 1,
            groups: 1,
        };
        assert!(matches!(
            ConvGeom::resolve(&[1, 1, 6, 6], &[1, 1, 3, 3], spec),
            Err(Error::Config(_))
        ));
        assert!(ConvGeom::resolve(&[1, 1, 5, 5], &[1, 1, 3, 3], spec).is_ok());
    }
}
