use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::tensor::Scalar;

/// Mean absolute error.
pub fn spatial_loss<S: Scalar>(g: &mut Graph<S>, pred: Var, target: Var) -> Result<Var> {
    if g.shape(pred) != g.shape(target) {
        return Err(Error::shape("spatial_loss", g.shape(pred), g.shape(target)));
    }
    let d = g.sub(pred, target)?;
    let a = g.abs(d);
    Ok(g.mean(a))
}

/// Mean absolute difference of the real and imaginary planes of the
/// unnormalized 2-D spectra.
pub fn frequency_loss<S: Scalar>(g: &mut Graph<S>, pred: Var, target: Var) -> Result<Var> {
    if g.shape(pred) != g.shape(target) {
        return Err(Error::shape("frequency_loss", g.shape(pred), g.shape(target)));
    }
    let fp = g.fft2(pred)?;
    let ft = g.fft2(target)?;
    let d = g.sub(fp, ft)?;
    let a = g.abs(d);
    Ok(g.mean(a))
}

#[derive(Clone, Copy, Debug)]
pub struct LossTerms {
    pub total: Var,
    pub spatial: Var,
    pub frequency: Var,
}

/// `spatial + lambda * frequency`.
pub fn total_loss<S: Scalar>(g: &mut Graph<S>, pred: Var, target: Var, lambda: f64) -> Result<LossTerms> {
    let spatial = spatial_loss(g, pred, target)?;
    let frequency = frequency_loss(g, pred, target)?;
    let weighted = g.scale(frequency, lambda);
    let total = g.add(spatial, weighted)?;
    Ok(LossTerms {
        total,
        spatial,
        frequency,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn eval(f: impl Fn(&mut Graph<f64>, Var, Var) -> Result<Var>, a: Tensor<f64>, b: Tensor<f64>) -> f64 {
        let mut g = Graph::new();
        let (a, b) = (g.constant(a), g.constant(b));
        let l = f(&mut g, a, b).unwrap();
        g.value(l).item()
    }

    #[test]
    fn half_offset_spatial() {
        let t = Tensor::<f64>::full(&[1, 3, 4, 4], 0.25);
        let p = t.map(|v| v + 0.5);
        assert!((eval(spatial_loss, p, t) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn constant_offset_hits_dc_only() {
        let t = Tensor::<f64>::zeros(&[1, 1, 8, 4]);
        let p = Tensor::full(&[1, 1, 8, 4], -0.3);
        // only the DC real part differs, by |c| * H * W, averaged over 2 * H * W values
        assert!((eval(frequency_loss, p, t) - 0.15).abs() < 1e-12);
    }

    #[test]
    fn lambda_zero_is_spatial() {
        let mut g = Graph::<f64>::new();
        let a = g.constant(Tensor::from_f64(&[1, 1, 2, 2], &[0.1, 0.7, 0.3, 0.9]).unwrap());
        let b = g.constant(Tensor::from_f64(&[1, 1, 2, 2], &[0.4, 0.2, 0.3, 0.0]).unwrap());
        let l = total_loss(&mut g, a, b, 0.0).unwrap();
        assert_eq!(g.value(l.total).item(), g.value(l.spatial).item());
    }
}
