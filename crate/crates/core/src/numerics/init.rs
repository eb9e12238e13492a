#[allow(unused_imports)]
use num_traits::Float;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use alloc::string::String;

use super::{ParamId, ParamStore, Scalar, Tensor};
use crate::error::Result;

/// He-normal initialization for ReLU stacks: σ = sqrt(2 / fan_in).
pub fn kaiming_normal<T: Scalar, R: Rng + ?Sized>(rng: &mut R, shape: &[usize], fan_in: usize) -> Tensor<T> {
    let std = (2.0 / fan_in as f64).sqrt();
    Tensor::from_fn(shape.to_vec(), |_| {
        let z: f64 = StandardNormal.sample(rng);
        T::from_f64(z * std)
    })
}

/// Registers freshly initialized parameters in a store.
pub struct ParamBuilder<'a, T: Scalar, R: Rng + ?Sized> {
    pub store: &'a mut ParamStore<T>,
    pub rng: &'a mut R,
}

impl<'a, T: Scalar, R: Rng + ?Sized> ParamBuilder<'a, T, R> {
    pub fn new(store: &'a mut ParamStore<T>, rng: &'a mut R) -> Self {
        Self { store, rng }
    }

    /// Uniform(±1/sqrt(fan_in)), the usual default for linear and conv layers.
    pub fn linear(&mut self, name: impl Into<String>, shape: &[usize], fan_in: usize) -> Result<ParamId> {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        let value = Tensor::from_fn(shape.to_vec(), |_| T::from_f64(self.rng.gen_range(-bound..bound)));
        self.store.add(name, value)
    }

    pub fn normal(&mut self, name: impl Into<String>, shape: &[usize], std: f64) -> Result<ParamId> {
        let value = Tensor::from_fn(shape.to_vec(), |_| {
            let z: f64 = StandardNormal.sample(self.rng);
            T::from_f64(z * std)
        });
        self.store.add(name, value)
    }

    pub fn kaiming(&mut self, name: impl Into<String>, shape: &[usize], fan_in: usize) -> Result<ParamId> {
        let value = kaiming_normal(self.rng, shape, fan_in);
        self.store.add(name, value)
    }

    pub fn zeros(&mut self, name: impl Into<String>, shape: &[usize]) -> Result<ParamId> {
        self.store.add(name, Tensor::zeros(shape.to_vec()))
    }

    pub fn ones(&mut self, name: impl Into<String>, shape: &[usize]) -> Result<ParamId> {
        self.store.add(name, Tensor::ones(shape.to_vec()))
    }
}
