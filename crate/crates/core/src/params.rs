//! Named parameter storage and initializers.

use std::ops::Index;

use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};

use crate::error::{Error, Result};
use crate::tensor::{Real, Tape, Tensor, Var};

/// Index of a parameter inside a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Ordered collection of named tensors.
#[derive(Clone, Debug, Default)]
pub struct ParamStore<F> {
    names: Vec<String>,
    values: Vec<Tensor<F>>,
}

impl<F: Real> ParamStore<F> {
    pub fn new() -> Self {
        ParamStore {
            names: Vec::new(),
            values: Vec::new(),
        }
    }

    /// Registers a tensor. Names must be unique.
    pub fn add(&mut self, name: impl Into<String>, value: Tensor<F>) -> ParamId {
        let name = name.into();
        assert!(!self.names.contains(&name), "duplicate parameter {name}");
        self.names.push(name);
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor<F> {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<F> {
        &mut self.values[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<F>)> {
        self.names.iter().map(String::as_str).zip(&self.values)
    }

    /// Total number of scalars.
    pub fn scalar_count(&self) -> usize {
        self.values.iter().map(Tensor::len).sum()
    }

    /// Number of scalars in parameters whose name starts with `prefix`.
    pub fn scalar_count_with_prefix(&self, prefix: &str) -> usize {
        self.iter().filter(|(n, _)| n.starts_with(prefix)).map(|(_, t)| t.len()).sum()
    }

    /// Replaces a tensor, keeping its shape.
    pub fn set(&mut self, name: &str, value: Tensor<F>) -> Result<()> {
        let id = self
            .find(name)
            .ok_or_else(|| Error::InvalidInput(format!("unknown parameter {name}")))?;
        if self.values[id.0].shape() != value.shape() {
            return Err(Error::shape("set_parameter", self.values[id.0].shape(), value.shape()));
        }
        self.values[id.0] = value;
        Ok(())
    }

    /// Puts every parameter on the tape as a gradient-receiving input.
    pub fn bind(&self, tape: &mut Tape<F>) -> Bindings {
        Bindings(self.values.iter().map(|t| tape.param(t.clone())).collect())
    }

    pub fn cast<G: Real>(&self) -> ParamStore<G> {
        ParamStore {
            names: self.names.clone(),
            values: self.values.iter().map(Tensor::cast).collect(),
        }
    }
}

/// Tape variables for every parameter of a store, indexed by [`ParamId`].
pub struct Bindings(Vec<Var>);

impl Bindings {
    pub fn from_vars(vars: Vec<Var>) -> Self {
        Bindings(vars)
    }

    pub fn vars(&self) -> &[Var] {
        &self.0
    }
}

impl Index<ParamId> for Bindings {
    type Output = Var;

    fn index(&self, id: ParamId) -> &Var {
        &self.0[id.0]
    }
}

pub fn normal<F: Real>(shape: &[usize], std: f64, rng: &mut impl Rng) -> Tensor<F> {
    let dist = Normal::new(0.0, std).expect("finite standard deviation");
    let len = shape.iter().product();
    Tensor::new(shape, (0..len).map(|_| F::c(dist.sample(rng))).collect()).expect("shape")
}

/// Uniform on `[-bound, bound]`.
pub fn uniform<F: Real>(shape: &[usize], bound: f64, rng: &mut impl Rng) -> Tensor<F> {
    let dist = Uniform::new_inclusive(-bound, bound);
    let len = shape.iter().product();
    Tensor::new(shape, (0..len).map(|_| F::c(dist.sample(rng))).collect()).expect("shape")
}

/// Glorot-uniform initialization of a `[fan_in, fan_out]` matrix.
pub fn glorot<F: Real>(fan_in: usize, fan_out: usize, rng: &mut impl Rng) -> Tensor<F> {
    uniform(&[fan_in, fan_out], (6.0 / (fan_in + fan_out) as f64).sqrt(), rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn store_round_trip() {
        let mut store = ParamStore::<f64>::new();
        let a = store.add("a", Tensor::zeros(&[2, 3]));
        let b = store.add("b.bias", Tensor::zeros(&[3]));
        assert_eq!(store.find("b.bias"), Some(b));
        assert_eq!(store.name(a), "a");
        assert_eq!(store.scalar_count(), 9);
        assert_eq!(store.scalar_count_with_prefix("b."), 3);
        assert!(store.set("a", Tensor::zeros(&[3, 2])).is_err());
        assert!(store.set("missing", Tensor::zeros(&[1])).is_err());
    }

    #[test]
    fn initializers_are_seeded() {
        let x: Tensor<f64> = normal(&[4, 4], 0.02, &mut ChaCha8Rng::seed_from_u64(1));
        let y: Tensor<f64> = normal(&[4, 4], 0.02, &mut ChaCha8Rng::seed_from_u64(1));
        assert_eq!(x, y);
        let g: Tensor<f64> = glorot(3, 5, &mut ChaCha8Rng::seed_from_u64(2));
        let bound = (6.0f64 / 8.0).sqrt();
        assert!(g.data().iter().all(|v| v.abs() <= bound));
    }
}
