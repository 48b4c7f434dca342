use std::collections::HashMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{psnr, ImagePair};
use crate::error::{Error, Result};
use crate::kernels::is_pow2;
use crate::network::{Ctx, DehazeMamba, ParamStore};
use crate::tensor::Tensor;
use crate::train::checkpoint::{self, Record};
use crate::train::loss::total_loss;
use crate::train::optim::{cosine_lr, AdamW, AdamWConfig};

pub const LOG_HEADER: &str = "step\tlr\tloss_spatial\tloss_freq\tpsnr";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr_max: f64,
    pub lr_min: f64,
    pub batch: usize,
    pub steps: u64,
    /// Weight of the frequency loss.
    pub lambda: f64,
    pub crop: usize,
    pub seed: u64,
    pub log_every: u64,
    /// 0 writes a checkpoint only at the end of a run.
    pub checkpoint_every: u64,
    pub flip: bool,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Threads computing per-sample gradients. Results do not depend on it.
    pub workers: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let adam = AdamWConfig::default();
        Self {
            lr_max: 2e-4,
            lr_min: 1e-6,
            batch: 6,
            steps: 2000,
            lambda: 0.1,
            crop: 32,
            seed: 0,
            log_every: 50,
            checkpoint_every: 0,
            flip: true,
            weight_decay: adam.weight_decay,
            beta1: adam.beta1,
            beta2: adam.beta2,
            eps: adam.eps,
            workers: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if !(self.lr_min < self.lr_max) || self.lr_min < 0.0 {
            return fail(format!("need 0 <= lr_min < lr_max, got {} / {}", self.lr_min, self.lr_max));
        }
        if !(self.lambda >= 0.0) {
            return fail(format!("lambda must be >= 0, got {}", self.lambda));
        }
        if !is_pow2(self.crop) || self.crop < 4 {
            return fail(format!("crop must be a power of two >= 4, got {}", self.crop));
        }
        if self.batch == 0 || self.steps == 0 || self.workers == 0 {
            return fail("batch, steps and workers must be positive".into());
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.eps > 0.0) {
            return fail("adamw betas must lie in [0, 1) and eps be positive".into());
        }
        Ok(())
    }

    pub fn adamw(&self) -> AdamWConfig {
        AdamWConfig {
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
            weight_decay: self.weight_decay,
        }
    }

    pub fn lr(&self, step: u64) -> f64 {
        cosine_lr(step, self.steps, self.lr_max, self.lr_min)
    }
}

/// Batch means recorded for one optimizer step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepLog {
    pub step: u64,
    pub lr: f64,
    pub loss: f64,
    pub loss_spatial: f64,
    pub loss_freq: f64,
    pub psnr: f64,
}

impl StepLog {
    pub fn line(&self) -> String {
        format!(
            "{}\t{:.6e}\t{:.6}\t{:.6}\t{:.4}",
            self.step, self.lr, self.loss_spatial, self.loss_freq, self.psnr
        )
    }
}

/// One augmented training sample, each tensor with a leading batch axis of 1.
#[derive(Clone, Debug)]
pub struct Sample {
    pub hazy: Tensor<f32>,
    pub sar: Tensor<f32>,
    pub clear: Tensor<f32>,
}

fn crop(t: &Tensor<f32>, oy: usize, ox: usize, size: usize, flip: bool) -> Tensor<f32> {
    let (c, w) = (t.shape()[0], t.shape()[2]);
    let h = t.shape()[1];
    let d = t.data();
    let mut out = Vec::with_capacity(c * size * size);
    for ch in 0..c {
        for y in 0..size {
            let row = (ch * h + oy + y) * w + ox;
            for x in 0..size {
                let xx = if flip { size - 1 - x } else { x };
                out.push(d[row + xx]);
            }
        }
    }
    Tensor::new(&[1, c, size, size], out).expect("crop shape")
}

/// Draws the batch of `step` from a stream keyed by `(seed, step)`, so any
/// step can be regenerated independently of the ones before it.
pub fn sample_batch(cfg: &TrainConfig, step: u64, data: &[ImagePair]) -> Vec<Sample> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(step);
    (0..cfg.batch)
        .map(|_| {
            let p = &data[rng.random_range(0..data.len())];
            let oy = rng.random_range(0..=p.height() - cfg.crop);
            let ox = rng.random_range(0..=p.width() - cfg.crop);
            let flip = cfg.flip && rng.random::<bool>();
            Sample {
                hazy: crop(&p.hazy, oy, ox, cfg.crop, flip),
                sar: crop(&p.sar, oy, ox, cfg.crop, flip),
                clear: crop(&p.clear, oy, ox, cfg.crop, flip),
            }
        })
        .collect()
}

struct SampleResult {
    grads: Vec<Tensor<f32>>,
    loss: f64,
    spatial: f64,
    freq: f64,
    psnr: f64,
}

fn run_sample(model: &DehazeMamba, store: &ParamStore<f32>, lambda: f64, s: &Sample) -> Result<SampleResult> {
    let mut cx = Ctx::new(store);
    let hazy = cx.input(s.hazy.clone());
    let sar = cx.input(s.sar.clone());
    let target = cx.input(s.clear.clone());
    let out = model.forward(&mut cx, hazy, sar)?;
    let terms = total_loss(&mut cx.g, out.image, target, lambda)?;
    let loss = cx.g.value(terms.total).item() as f64;
    let pred = cx.g.value(out.image).map(|v| v.clamp(0.0, 1.0)).select0(0);
    let quality = psnr(&pred, &s.clear.select0(0))?;
    if loss.is_finite() {
        cx.g.backward(terms.total)?;
    }
    Ok(SampleResult {
        grads: if loss.is_finite() { cx.param_grads(store) } else { Vec::new() },
        loss,
        spatial: cx.g.value(terms.spatial).item() as f64,
        freq: cx.g.value(terms.frequency).item() as f64,
        psnr: quality,
    })
}

pub struct Trainer {
    pub model: DehazeMamba,
    pub store: ParamStore<f32>,
    pub opt: AdamW,
    pub cfg: TrainConfig,
}

impl Trainer {
    pub fn new(model: DehazeMamba, store: ParamStore<f32>, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            model,
            store,
            opt: AdamW::new(cfg.adamw()),
            cfg,
        })
    }

    /// Optimizer steps taken so far.
    pub fn step(&self) -> u64 {
        self.opt.steps()
    }

    pub fn check_data(&self, data: &[ImagePair]) -> Result<()> {
        if data.is_empty() {
            return Err(Error::Data("training dataset is empty".into()));
        }
        for p in data {
            p.validate()?;
            if p.height() < self.cfg.crop || p.width() < self.cfg.crop {
                return Err(Error::Config(format!(
                    "crop {} exceeds pair {} of {}x{}",
                    self.cfg.crop,
                    p.seed,
                    p.height(),
                    p.width()
                )));
            }
        }
        Ok(())
    }

    fn compute(&self, samples: &[Sample]) -> Result<Vec<SampleResult>> {
        let workers = self.cfg.workers.min(samples.len()).max(1);
        let lambda = self.cfg.lambda;
        if workers == 1 {
            return samples
                .iter()
                .map(|s| run_sample(&self.model, &self.store, lambda, s))
                .collect();
        }
        let chunk = samples.len().div_ceil(workers);
        let (model, store) = (&self.model, &self.store);
        std::thread::scope(|scope| {
            let handles: Vec<_> = samples
                .chunks(chunk)
                .map(|part| {
                    scope.spawn(move || {
                        part.iter()
                            .map(|s| run_sample(model, store, lambda, s))
                            .collect::<Result<Vec<_>>>()
                    })
                })
                .collect();
            let mut out = Vec::with_capacity(samples.len());
            for h in handles {
                out.extend(h.join().expect("gradient worker panicked")?);
            }
            Ok(out)
        })
    }

    fn non_finite_report(&self, grads: Option<&[Tensor<f32>]>) -> String {
        if let Some(name) = self.store.first_non_finite() {
            return format!("first non-finite parameter: {name}");
        }
        if let Some(grads) = grads {
            if let Some((id, _)) = self.store.ids().zip(grads).find(|(_, g)| !g.all_finite()) {
                return format!("parameters finite; first non-finite gradient: {}", self.store.name(id));
            }
        }
        "all parameters and gradients finite".into()
    }

    /// One optimizer step on the batch drawn for the current step index.
    pub fn train_step(&mut self, data: &[ImagePair]) -> Result<StepLog> {
        let step = self.step();
        if let Some(name) = self.store.first_non_finite() {
            return Err(Error::Numeric(format!(
                "cannot train from step {step}: first non-finite parameter: {name}"
            )));
        }
        let samples = sample_batch(&self.cfg, step, data);
        let results = self.compute(&samples)?;
        let n = results.len() as f64;
        let mean = |f: fn(&SampleResult) -> f64| results.iter().map(f).sum::<f64>() / n;
        let log = StepLog {
            step,
            lr: self.cfg.lr(step),
            loss: mean(|r| r.loss),
            loss_spatial: mean(|r| r.spatial),
            loss_freq: mean(|r| r.freq),
            psnr: mean(|r| r.psnr),
        };
        if !log.loss.is_finite() {
            return Err(Error::Numeric(format!(
                "loss is {} at step {step}; {}",
                log.loss,
                self.non_finite_report(None)
            )));
        }
        let mut grads: Vec<Tensor<f32>> = results[0].grads.clone();
        for r in &results[1..] {
            for (acc, g) in grads.iter_mut().zip(&r.grads) {
                acc.add_assign(g);
            }
        }
        let inv = 1.0 / results.len() as f32;
        for g in &mut grads {
            for v in g.data_mut() {
                *v *= inv;
            }
        }
        self.opt.step(&mut self.store, &grads, log.lr)?;
        if self.store.first_non_finite().is_some() {
            return Err(Error::Numeric(format!(
                "update at step {step} produced non-finite values; {}",
                self.non_finite_report(Some(&grads))
            )));
        }
        Ok(log)
    }

    /// Trains until `cfg.steps` (or the earlier `until`), calling `on_step`
    /// after every step.
    pub fn run(
        &mut self,
        data: &[ImagePair],
        until: Option<u64>,
        mut on_step: impl FnMut(&Self, &StepLog) -> Result<()>,
    ) -> Result<Vec<StepLog>> {
        self.check_data(data)?;
        let end = until.map_or(self.cfg.steps, |u| u.min(self.cfg.steps));
        let mut trace = Vec::new();
        while self.step() < end {
            let log = self.train_step(data)?;
            on_step(self, &log)?;
            trace.push(log);
        }
        Ok(trace)
    }

    pub fn records(&self) -> Vec<Record> {
        let mut out = Vec::with_capacity(3 * self.store.len() + 1);
        for (name, t) in self.store.iter() {
            out.push((format!("param:{name}"), t.clone()));
        }
        for (name, _) in self.store.iter() {
            if let Some((m, v)) = self.opt.moments(name) {
                out.push((format!("adamw.m:{name}"), m.clone()));
                out.push((format!("adamw.v:{name}"), v.clone()));
            }
        }
        out.push(("train.step".into(), Tensor::scalar(self.step() as f32)));
        out
    }

    /// Restores parameters and, when present, optimizer state and step.
    pub fn restore(&mut self, records: Vec<Record>) -> Result<()> {
        let (params, state) = split_records(records)?;
        self.store.load_from(&params)?;
        let (step, m, v) = state;
        if step >= 1 << f32::MANTISSA_DIGITS {
            return Err(Error::Data(format!("checkpoint step {step} out of range")));
        }
        self.opt.restore(step, m, v)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if self.step() >= 1 << f32::MANTISSA_DIGITS {
            return Err(Error::Numeric("step counter exceeds the checkpoint's exact range".into()));
        }
        checkpoint::save(path, &self.records())
    }

    pub fn load(&mut self, path: &Path) -> Result<()> {
        self.restore(checkpoint::load(path)?)
    }
}

type OptimState = (u64, HashMap<String, Tensor<f32>>, HashMap<String, Tensor<f32>>);

fn split_records(records: Vec<Record>) -> Result<(ParamStore<f32>, OptimState)> {
    let mut params = ParamStore::default();
    let (mut step, mut m, mut v) = (0u64, HashMap::new(), HashMap::new());
    for (name, t) in records {
        if let Some(n) = name.strip_prefix("param:") {
            params.insert(n, t)?;
        } else if let Some(n) = name.strip_prefix("adamw.m:") {
            m.insert(n.to_string(), t);
        } else if let Some(n) = name.strip_prefix("adamw.v:") {
            v.insert(n.to_string(), t);
        } else if name == "train.step" {
            let s = t.item();
            if !(s >= 0.0 && s.fract() == 0.0) {
                return Err(Error::Data(format!("invalid train.step {s}")));
            }
            step = s as u64;
        } else {
            return Err(Error::Data(format!("unknown checkpoint record {name}")));
        }
    }
    Ok((params, (step, m, v)))
}

/// Parameters only, for inference.
pub fn load_params(path: &Path, store: &mut ParamStore<f32>) -> Result<()> {
    let (params, _) = split_records(checkpoint::load(path)?)?;
    store.load_from(&params)
}
