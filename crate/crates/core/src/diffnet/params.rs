use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Weight initialization scheme. Biases start at zero, batch-norm scale at one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitScheme {
    /// Normal(0, 0.02), the DCGAN convention.
    Dcgan,
    /// Normal(0, sqrt(2 / fan_in)).
    HeNormal,
}

impl InitScheme {
    pub(crate) fn std(self, fan_in: usize) -> f64 {
        match self {
            InitScheme::Dcgan => 0.02,
            InitScheme::HeNormal => (2.0 / fan_in.max(1) as f64).sqrt(),
        }
    }

    pub(crate) fn sample<T: Scalar, R: Rng + ?Sized>(self, shape: &[usize], fan_in: usize, rng: &mut R) -> Tensor<T> {
        let normal = Normal::new(0.0, self.std(fan_in)).expect("positive std");
        let n = shape.iter().product();
        let values = (0..n).map(|_| T::from_f64_lossy(normal.sample(rng))).collect();
        Tensor::raw(shape.to_vec(), values)
    }
}

/// How a parameter set was initialized.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InitRecord {
    pub scheme: InitScheme,
    pub seed: u64,
}

/// Named tensor. Trainable tensors carry a gradient of identical shape;
/// batch-norm running statistics do not.
#[derive(Debug, Clone, PartialEq)]
pub struct Param<T> {
    pub name: String,
    pub value: Tensor<T>,
    pub grad: Option<Tensor<T>>,
}

impl<T: Scalar> Param<T> {
    pub fn trainable(name: String, value: Tensor<T>) -> Self {
        let grad = Some(Tensor::zeros(value.shape()));
        Param { name, value, grad }
    }

    pub fn statistic(name: String, value: Tensor<T>) -> Self {
        Param { name, value, grad: None }
    }

    pub fn is_trainable(&self) -> bool {
        self.grad.is_some()
    }
}

/// Ordered collection of the named tensors of one network.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet<T> {
    entries: Vec<Param<T>>,
    pub init: InitRecord,
}

impl<T: Scalar> ParamSet<T> {
    pub fn new(init: InitRecord) -> Self {
        ParamSet {
            entries: Vec::new(),
            init,
        }
    }

    pub(crate) fn push(&mut self, p: Param<T>) -> usize {
        self.entries.push(p);
        self.entries.len() - 1
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param<T>> {
        self.entries.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param<T>> {
        self.entries.iter_mut()
    }

    pub fn get(&self, i: usize) -> &Param<T> {
        &self.entries[i]
    }

    pub fn get_mut(&mut self, i: usize) -> &mut Param<T> {
        &mut self.entries[i]
    }

    pub fn by_name(&self, name: &str) -> Option<&Param<T>> {
        self.entries.iter().find(|p| p.name == name)
    }

    pub fn by_name_mut(&mut self, name: &str) -> Option<&mut Param<T>> {
        self.entries.iter_mut().find(|p| p.name == name)
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.entries {
            if let Some(g) = p.grad.as_mut() {
                g.fill(T::zero());
            }
        }
    }

    /// Number of trainable scalars.
    pub fn trainable_count(&self) -> usize {
        self.entries
            .iter()
            .filter(|p| p.is_trainable())
            .map(|p| p.value.len())
            .sum()
    }

    /// Replaces values by name. Every entry must be present with its shape.
    pub fn load<U: Scalar>(&mut self, tensors: &[(String, Tensor<U>)]) -> Result<()> {
        for p in &mut self.entries {
            let (_, t) = tensors
                .iter()
                .find(|(n, _)| *n == p.name)
                .ok_or_else(|| Error::Format(format!("checkpoint lacks tensor {}", p.name)))?;
            if t.shape() != p.value.shape() {
                return Err(Error::Format(format!(
                    "tensor {} has shape {:?}, expected {:?}",
                    p.name,
                    t.shape(),
                    p.value.shape()
                )));
            }
            p.value = t.cast();
        }
        Ok(())
    }

    /// `(name, value)` pairs in declaration order.
    pub fn named_tensors(&self) -> Vec<(String, Tensor<T>)> {
        self.entries.iter().map(|p| (p.name.clone(), p.value.clone())).collect()
    }
}
