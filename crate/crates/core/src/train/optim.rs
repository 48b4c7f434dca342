use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::network::ParamStore;
use crate::tensor::Tensor;

/// Cosine annealing from `lr_max` at step 0 to `lr_min` at step `total`.
pub fn cosine_lr(step: u64, total: u64, lr_max: f64, lr_min: f64) -> f64 {
    if step >= total {
        return lr_min;
    }
    if step == 0 {
        return lr_max;
    }
    let t = step as f64 / total as f64;
    lr_min + 0.5 * (lr_max - lr_min) * (1.0 + (std::f64::consts::PI * t).cos())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

/// Adam with decoupled weight decay. Moments are keyed by parameter name, so
/// the update does not depend on registration order.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamW {
    pub cfg: AdamWConfig,
    t: u64,
    m: HashMap<String, Tensor<f32>>,
    v: HashMap<String, Tensor<f32>>,
}

impl AdamW {
    pub fn new(cfg: AdamWConfig) -> Self {
        Self {
            cfg,
            t: 0,
            m: HashMap::new(),
            v: HashMap::new(),
        }
    }

    /// Number of updates applied so far.
    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn moments(&self, name: &str) -> Option<(&Tensor<f32>, &Tensor<f32>)> {
        Some((self.m.get(name)?, self.v.get(name)?))
    }

    /// Restores state; `m` and `v` must cover the same names.
    pub fn restore(&mut self, t: u64, m: HashMap<String, Tensor<f32>>, v: HashMap<String, Tensor<f32>>) -> Result<()> {
        if m.len() != v.len() || m.keys().any(|k| !v.contains_key(k)) {
            return Err(Error::Data("optimizer moments are incomplete".into()));
        }
        self.t = t;
        self.m = m;
        self.v = v;
        Ok(())
    }

    /// One update; `grads` is aligned with the store's registration order.
    pub fn step(&mut self, store: &mut ParamStore<f32>, grads: &[Tensor<f32>], lr: f64) -> Result<()> {
        if grads.len() != store.len() {
            return Err(Error::Config(format!(
                "{} gradients for {} parameters",
                grads.len(),
                store.len()
            )));
        }
        self.t += 1;
        let AdamWConfig {
            beta1,
            beta2,
            eps,
            weight_decay,
        } = self.cfg;
        let bc1 = 1.0 - beta1.powi(self.t as i32);
        let bc2 = 1.0 - beta2.powi(self.t as i32);
        let shrink = 1.0 - lr * weight_decay;
        let ids: Vec<_> = store.ids().collect();
        for (id, g) in ids.into_iter().zip(grads) {
            let name = store.name(id).to_string();
            let p = store.get_mut(id);
            if p.shape() != g.shape() {
                return Err(Error::shape("adamw_step", p.shape(), g.shape()));
            }
            let m = self.m.entry(name.clone()).or_insert_with(|| Tensor::zeros(g.shape()));
            let v = self.v.entry(name).or_insert_with(|| Tensor::zeros(g.shape()));
            for (((pv, &gv), mv), vv) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                let gv = gv as f64;
                let mn = beta1 * *mv as f64 + (1.0 - beta1) * gv;
                let vn = beta2 * *vv as f64 + (1.0 - beta2) * gv * gv;
                *mv = mn as f32;
                *vv = vn as f32;
                let update = (mn / bc1) / ((vn / bc2).sqrt() + eps);
                *pv = (*pv as f64 * shrink - lr * update) as f32;
            }
        }
        Ok(())
    }
}
