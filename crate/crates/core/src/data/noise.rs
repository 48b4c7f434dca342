use rand::Rng;

#[inline]
fn smooth(t: f64) -> f64 {
    t * t * (3.0 - 2.0 * t)
}

/// Multi-octave value noise on an `h x w` grid, rescaled to `[0, 1]`.
///
/// Octave `o` uses a lattice with cell size `base_cell / 2^o` and amplitude
/// `0.5^o`; lattice values are interpolated with a smoothstep.
pub fn value_noise<R: Rng + ?Sized>(h: usize, w: usize, base_cell: f64, octaves: usize, rng: &mut R) -> Vec<f64> {
    let mut out = vec![0.0; h * w];
    let mut amp = 1.0;
    let mut cell = base_cell.max(1.0);
    for _ in 0..octaves.max(1) {
        let gh = (h as f64 / cell).ceil() as usize + 2;
        let gw = (w as f64 / cell).ceil() as usize + 2;
        let lattice: Vec<f64> = (0..gh * gw).map(|_| rng.random::<f64>()).collect();
        for y in 0..h {
            let fy = y as f64 / cell;
            let (y0, ty) = (fy.floor() as usize, smooth(fy.fract()));
            for x in 0..w {
                let fx = x as f64 / cell;
                let (x0, tx) = (fx.floor() as usize, smooth(fx.fract()));
                let v00 = lattice[y0 * gw + x0];
                let v01 = lattice[y0 * gw + x0 + 1];
                let v10 = lattice[(y0 + 1) * gw + x0];
                let v11 = lattice[(y0 + 1) * gw + x0 + 1];
                let top = v00 + (v01 - v00) * tx;
                let bottom = v10 + (v11 - v10) * tx;
                out[y * w + x] += amp * (top + (bottom - top) * ty);
            }
        }
        amp *= 0.5;
        cell = (cell / 2.0).max(1.0);
    }
    let lo = out.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = out.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    if span > 0.0 {
        for v in &mut out {
            *v = (*v - lo) / span;
        }
    }
    out
}
