//! Named parameter storage and the per-step binding of parameters onto a tape.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::tensor::{Scalar, Tensor};

/// Standard deviation of the truncated-normal weight init.
pub const INIT_STD: f64 = 0.02;

/// Index of a parameter inside a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

#[derive(Clone, Debug, PartialEq)]
pub struct ParamStore<S: Scalar = f32> {
    names: Vec<String>,
    values: Vec<Tensor<S>>,
    lookup: HashMap<String, usize>,
}

impl<S: Scalar> Default for ParamStore<S> {
    fn default() -> Self {
        Self {
            names: Vec::new(),
            values: Vec::new(),
            lookup: HashMap::new(),
        }
    }
}

impl<S: Scalar> ParamStore<S> {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor<S>) -> Result<ParamId> {
        let name = name.into();
        if self.lookup.contains_key(&name) {
            return Err(Error::Config(format!("duplicate parameter name {name}")));
        }
        self.lookup.insert(name.clone(), self.values.len());
        self.names.push(name);
        self.values.push(value);
        Ok(ParamId(self.values.len() - 1))
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.lookup.get(name).copied().map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn get(&self, id: ParamId) -> &Tensor<S> {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<S> {
        &mut self.values[id.0]
    }

    pub fn by_name(&self, name: &str) -> Option<&Tensor<S>> {
        self.id(name).map(|id| self.get(id))
    }

    pub fn by_name_mut(&mut self, name: &str) -> Option<&mut Tensor<S>> {
        self.id(name).map(|id| &mut self.values[id.0])
    }

    /// Parameters in registration order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<S>)> {
        self.names.iter().map(String::as_str).zip(&self.values)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    /// Total number of scalar parameters.
    pub fn count(&self) -> usize {
        self.values.iter().map(Tensor::numel).sum()
    }

    pub fn cast<T: Scalar>(&self) -> ParamStore<T> {
        ParamStore {
            names: self.names.clone(),
            values: self.values.iter().map(Tensor::cast).collect(),
            lookup: self.lookup.clone(),
        }
    }

    /// Overwrites values from `other`, which must hold the same names and shapes.
    pub fn load_from(&mut self, other: &ParamStore<S>) -> Result<()> {
        for (name, value) in other.iter() {
            let slot = self
                .by_name_mut(name)
                .ok_or_else(|| Error::Data(format!("unknown parameter {name} in checkpoint")))?;
            if slot.shape() != value.shape() {
                return Err(Error::shape("load parameter", slot.shape(), value.shape()));
            }
            *slot = value.clone();
        }
        if let Some(missing) = self.names.iter().find(|n| other.id(n).is_none()) {
            return Err(Error::Data(format!("checkpoint lacks parameter {missing}")));
        }
        Ok(())
    }

    /// Name of the first parameter holding a NaN or infinity.
    pub fn first_non_finite(&self) -> Option<&str> {
        self.iter().find(|(_, t)| !t.all_finite()).map(|(n, _)| n)
    }
}

/// Registers parameters with their initial values while a model is built.
pub struct Builder {
    store: ParamStore<f32>,
    rng: ChaCha8Rng,
    prefix: Vec<String>,
}

impl Builder {
    pub fn new(seed: u64) -> Self {
        Self {
            store: ParamStore::default(),
            rng: ChaCha8Rng::seed_from_u64(seed),
            prefix: Vec::new(),
        }
    }

    pub fn finish(self) -> ParamStore<f32> {
        self.store
    }

    pub fn push(&mut self, scope: impl Into<String>) {
        self.prefix.push(scope.into());
    }

    pub fn pop(&mut self) {
        self.prefix.pop();
    }

    /// Runs `f` with `scope` appended to the name prefix.
    pub fn scoped<T>(&mut self, scope: impl Into<String>, f: impl FnOnce(&mut Self) -> Result<T>) -> Result<T> {
        self.push(scope);
        let out = f(self);
        self.pop();
        out
    }

    fn full_name(&self, name: &str) -> String {
        let mut s = self.prefix.join(".");
        if !s.is_empty() {
            s.push('.');
        }
        s.push_str(name);
        s
    }

    pub fn tensor(&mut self, name: &str, value: Tensor<f32>) -> Result<ParamId> {
        let full = self.full_name(name);
        self.store.insert(full, value)
    }

    pub fn weight(&mut self, name: &str, shape: &[usize]) -> Result<ParamId> {
        let t = Tensor::trunc_normal(shape, INIT_STD, &mut self.rng);
        self.tensor(name, t)
    }

    pub fn zeros(&mut self, name: &str, shape: &[usize]) -> Result<ParamId> {
        self.tensor(name, Tensor::zeros(shape))
    }

    pub fn ones(&mut self, name: &str, shape: &[usize]) -> Result<ParamId> {
        self.tensor(name, Tensor::ones(shape))
    }

    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        self.rng.random_range(lo..hi)
    }
}

/// A tape with every parameter of a store bound as a trainable leaf.
pub struct Ctx<S: Scalar = f32> {
    pub g: Graph<S>,
    vars: Vec<Var>,
}

impl<S: Scalar> Ctx<S> {
    pub fn new(store: &ParamStore<S>) -> Self {
        let mut g = Graph::new();
        let vars = store.values.iter().map(|v| g.param(v.clone())).collect();
        Self { g, vars }
    }

    /// Binds every parameter as a detached constant (inference).
    pub fn frozen(store: &ParamStore<S>) -> Self {
        let mut g = Graph::new();
        let vars = store.values.iter().map(|v| g.constant(v.clone())).collect();
        Self { g, vars }
    }

    #[inline]
    pub fn p(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }

    pub fn input(&mut self, t: Tensor<S>) -> Var {
        self.g.constant(t)
    }

    /// Gradients aligned with the store, zero where a parameter was unreachable.
    pub fn param_grads(&self, store: &ParamStore<S>) -> Vec<Tensor<S>> {
        self.vars
            .iter()
            .zip(&store.values)
            .map(|(&v, value)| {
                self.g
                    .grad(v)
                    .cloned()
                    .unwrap_or_else(|| Tensor::zeros(value.shape()))
            })
            .collect()
    }
}
