use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::rng::derive_seed;

/// Named trainable tensors, ordered by name.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    params: BTreeMap<String, Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.params.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.params.get_mut(name)
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) {
        self.params.insert(name.into(), value);
    }

    pub fn contains(&self, name: &str) -> bool {
        self.params.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.params.iter()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.params.keys()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.params.values().map(Tensor::len).sum()
    }

    /// Uniform init in `±1/sqrt(fan_in)`, seeded per parameter name so the
    /// result does not depend on registration order.
    pub fn init_uniform(&mut self, seed: u64, name: &str, shape: &[usize], fan_in: usize) {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, name, 0));
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| rng.random_range(-bound..bound)).collect();
        self.params
            .insert(name.to_string(), Tensor::new(shape, data).expect("shape"));
    }

    /// Uniform init in `±sqrt(6/fan_in)`, for layers followed by a ReLU.
    pub fn init_he(&mut self, seed: u64, name: &str, shape: &[usize], fan_in: usize) {
        self.init_uniform(seed, name, shape, fan_in);
        let t = self.params.get_mut(name).expect("just inserted");
        t.scale_in_place(6f64.sqrt());
    }

    pub fn init_const(&mut self, name: &str, shape: &[usize], value: f64) {
        self.params.insert(name.to_string(), Tensor::full(shape, value));
    }

    /// Every parameter whose name starts with `prefix`.
    pub fn with_prefix<'a>(&'a self, prefix: &'a str) -> impl Iterator<Item = (&'a String, &'a Tensor)> {
        self.params.range(prefix.to_string()..).take_while(move |(k, _)| k.starts_with(prefix))
    }

    /// Copies every `prefix`-named tensor from `donor`, renaming the prefix to
    /// `into_prefix`. Shapes must match the tensors already present here.
    pub fn copy_prefix_from(&mut self, donor: &ParamStore, prefix: &str, into_prefix: &str) -> Result<usize> {
        let mut copied = 0;
        for (name, t) in donor.with_prefix(prefix) {
            let target = format!("{into_prefix}{}", &name[prefix.len()..]);
            let slot = self
                .params
                .get_mut(&target)
                .ok_or_else(|| Error::Checkpoint(format!("warm start: no parameter {target}")))?;
            if slot.shape() != t.shape() {
                return Err(Error::Checkpoint(format!(
                    "warm start: {target} has shape {:?}, donor {name} has {:?}",
                    slot.shape(),
                    t.shape()
                )));
            }
            *slot = t.clone();
            copied += 1;
        }
        if copied == 0 {
            return Err(Error::Checkpoint(format!("warm start: donor has no {prefix}* parameters")));
        }
        Ok(copied)
    }

    /// Rounds every value through `f32`.
    pub fn round_f32(&mut self) {
        for t in self.params.values_mut() {
            *t = t.round_f32();
        }
    }
}
