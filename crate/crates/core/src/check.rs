//! 64-bit finite-difference checks of tape gradients.
//!
//! Errors are reported per input as `|a - n|_2 / max(|a|_2, |n|_2, FLOOR)`, where
//! `a` is the analytic gradient and `n` the central-difference estimate.

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

/// Denominator floor so that legitimately-zero gradients compare absolutely.
pub const FLOOR: f64 = 1e-6;

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff: Vec<f64> = analytic.iter().zip(numeric).map(|(a, n)| a - n).collect();
    norm(&diff) / norm(analytic).max(norm(numeric)).max(FLOOR)
}

fn eval<F>(inputs: &[Tensor<f64>], f: &F) -> Result<f64>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.constant(t.clone())).collect();
    let out = f(&mut g, &vars)?;
    if g.value(out).numel() != 1 {
        return Err(Error::Tape("gradient check needs a scalar function".into()));
    }
    Ok(g.value(out).item())
}

/// Analytic gradients of `f` with respect to every input.
pub fn analytic<F>(inputs: &[Tensor<f64>], f: &F) -> Result<Vec<Tensor<f64>>>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let out = f(&mut g, &vars)?;
    g.backward(out)?;
    Ok(vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| g.grad(v).cloned().unwrap_or_else(|| Tensor::zeros(t.shape())))
        .collect())
}

/// Per-input relative error over the coordinates listed in `coords[i]`
/// (every coordinate when `None`).
pub fn coordinate_check<F>(inputs: &[Tensor<f64>], h: f64, coords: Option<&[Vec<usize>]>, f: &F) -> Result<Vec<f64>>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let grads = analytic(inputs, f)?;
    let mut errors = Vec::with_capacity(inputs.len());
    for (i, input) in inputs.iter().enumerate() {
        let all: Vec<usize>;
        let idx: &[usize] = match coords {
            Some(c) => &c[i],
            None => {
                all = (0..input.numel()).collect();
                &all
            }
        };
        let mut a = Vec::with_capacity(idx.len());
        let mut n = Vec::with_capacity(idx.len());
        for &k in idx {
            let mut shifted = inputs.to_vec();
            shifted[i].data_mut()[k] = input.data()[k] + h;
            let up = eval(&shifted, f)?;
            shifted[i].data_mut()[k] = input.data()[k] - h;
            let down = eval(&shifted, f)?;
            n.push((up - down) / (2.0 * h));
            a.push(grads[i].data()[k]);
        }
        errors.push(relative_error(&a, &n));
    }
    Ok(errors)
}

/// Relative error of the directional derivative along `dirs` (one tensor per input).
pub fn directional_check<F>(inputs: &[Tensor<f64>], dirs: &[Tensor<f64>], h: f64, f: &F) -> Result<f64>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let grads = analytic(inputs, f)?;
    let a: f64 = grads
        .iter()
        .zip(dirs)
        .map(|(g, d)| g.data().iter().zip(d.data()).map(|(x, y)| x * y).sum::<f64>())
        .sum();
    let shift = |sign: f64| -> Vec<Tensor<f64>> {
        inputs
            .iter()
            .zip(dirs)
            .map(|(t, d)| t.zip_map(d, |x, y| x + sign * h * y).expect("direction matches input"))
            .collect()
    };
    let n = (eval(&shift(1.0), f)? - eval(&shift(-1.0), f)?) / (2.0 * h);
    Ok(relative_error(&[a], &[n]))
}

/// `sum(out * weights)`: a generic scalar projection of any output.
pub fn project(g: &mut Graph<f64>, out: Var, weights: &Tensor<f64>) -> Result<Var> {
    let w = g.constant(weights.clone());
    let p = g.mul(out, w)?;
    Ok(g.sum(p))
}
