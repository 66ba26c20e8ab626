//! Named parameter storage and scoped access for building blocks.

use std::collections::BTreeMap;

use ndarray::IxDyn;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::autograd::{Graph, Tensor, Var};
use crate::error::{invalid, Result};

/// Flat, ordered map from dotted parameter names to weight arrays.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    tensors: BTreeMap<String, Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) {
        self.tensors.insert(name.into(), value);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.tensors.get_mut(name)
    }

    pub fn require(&self, name: &str) -> Result<&Tensor> {
        self.get(name)
            .ok_or_else(|| invalid(format!("missing parameter `{name}`")))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tensors.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.tensors.keys()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.tensors.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor)> {
        self.tensors.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total number of scalar weights.
    pub fn count(&self) -> usize {
        self.tensors.values().map(|t| t.len()).sum()
    }

    /// Scalar weights under a name prefix.
    pub fn count_prefix(&self, prefix: &str) -> usize {
        self.tensors
            .iter()
            .filter(|(k, _)| k.starts_with(prefix))
            .map(|(_, t)| t.len())
            .sum()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.values().all(|t| t.iter().all(|v| v.is_finite()))
    }

    /// Replaces every exactly-zero weight with a small random value so that
    /// identity-initialized blocks become non-trivial.
    pub fn jitter_zeros(&mut self, seed: u64, scale: f64) {
        let mut rng = crate::rng::seeded(seed);
        for t in self.tensors.values_mut() {
            for v in t.iter_mut() {
                if *v == 0.0 {
                    *v = rng.random_range(-scale..scale);
                }
            }
        }
    }
}

/// Read access to parameters under a prefix, registering each one on the
/// graph the first time it is touched.
#[derive(Clone)]
pub struct Scope<'a> {
    pub graph: &'a Graph,
    pub store: &'a ParamStore,
    prefix: String,
}

impl<'a> Scope<'a> {
    pub fn root(graph: &'a Graph, store: &'a ParamStore) -> Self {
        Scope {
            graph,
            store,
            prefix: String::new(),
        }
    }

    pub fn full_name(&self, name: &str) -> String {
        if self.prefix.is_empty() {
            name.to_string()
        } else {
            format!("{}.{}", self.prefix, name)
        }
    }

    pub fn param(&self, name: &str) -> Result<Var> {
        let full = self.full_name(name);
        let value = self.store.require(&full)?;
        Ok(self.graph.param(&full, value))
    }

    pub fn has(&self, name: &str) -> bool {
        self.store.contains(&self.full_name(name))
    }

    pub fn child(&self, name: &str) -> Scope<'a> {
        Scope {
            graph: self.graph,
            store: self.store,
            prefix: self.full_name(name),
        }
    }
}

/// Parameter initializer writing into a store under a prefix.
pub struct Init<'a> {
    pub store: &'a mut ParamStore,
    pub rng: &'a mut ChaCha8Rng,
    prefix: String,
}

impl<'a> Init<'a> {
    pub fn new(store: &'a mut ParamStore, rng: &'a mut ChaCha8Rng) -> Self {
        Init {
            store,
            rng,
            prefix: String::new(),
        }
    }

    fn name(&self, name: &str) -> String {
        if self.prefix.is_empty() {
            name.to_string()
        } else {
            format!("{}.{}", self.prefix, name)
        }
    }

    /// Runs `f` with the prefix extended by `name`.
    pub fn scoped<R>(&mut self, name: &str, f: impl FnOnce(&mut Init<'_>) -> R) -> R {
        let saved = std::mem::replace(&mut self.prefix, String::new());
        self.prefix = if saved.is_empty() {
            name.to_string()
        } else {
            format!("{saved}.{name}")
        };
        let out = f(self);
        self.prefix = saved;
        out
    }

    /// Convolution kernel `(out, in, k, k)` plus bias `(1, out, 1, 1)`.
    /// Fan-in scaled normal weights, or zeros when `zero` is set.
    pub fn conv(&mut self, name: &str, c_out: usize, c_in: usize, k: usize, zero: bool) {
        let shape = [c_out, c_in, k, k];
        let w = if zero {
            Tensor::zeros(IxDyn(&shape))
        } else {
            let std = (2.0 / (c_in * k * k) as f64).sqrt() * 0.5;
            let normal = Normal::new(0.0, std).expect("valid std");
            Tensor::from_shape_fn(IxDyn(&shape), |_| normal.sample(self.rng))
        };
        self.store.insert(self.name(&format!("{name}.w")), w);
        self.store
            .insert(self.name(&format!("{name}.b")), Tensor::zeros(IxDyn(&[1, c_out, 1, 1])));
    }

    /// Arbitrary tensor filled with `value`.
    pub fn constant(&mut self, name: &str, shape: &[usize], value: f64) {
        self.store
            .insert(self.name(name), Tensor::from_elem(IxDyn(shape), value));
    }

    pub fn tensor(&mut self, name: &str, value: Tensor) {
        self.store.insert(self.name(name), value);
    }
}
