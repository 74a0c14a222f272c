use std::sync::Arc;

use rand::Rng as _;
use rand_distr::{Distribution, Normal};

use crate::autodiff::{Gradients, Graph, Var};
use crate::rng::Rng;
use crate::tensor::{Float, Tensor};

/// Index of a tensor inside a [`ParamSet`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ParamId(pub(crate) usize);

#[derive(Clone, Debug)]
pub struct Param<T> {
    pub name: String,
    pub value: Arc<Tensor<T>>,
    /// Frozen tensors are bound as constants and skipped by optimizers.
    pub frozen: bool,
}

/// Ordered, named parameter tensors of one network.
#[derive(Clone, Debug, Default)]
pub struct ParamSet<T> {
    entries: Vec<Param<T>>,
}

/// Graph handles for a [`ParamSet`] bound into one [`Graph`].
#[derive(Clone, Debug)]
pub struct Bound {
    vars: Vec<Var>,
    tracked: Vec<bool>,
}

impl Bound {
    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }

    /// Pulls this set's gradients out of `grads`, in parameter order.
    pub fn collect<T: crate::tensor::Float>(&self, grads: &mut Gradients<T>) -> Vec<Option<Tensor<T>>> {
        self.vars
            .iter()
            .zip(&self.tracked)
            .map(|(&v, &t)| if t { grads.take(v) } else { None })
            .collect()
    }
}

impl<T: Float> ParamSet<T> {
    pub fn new() -> Self {
        Self { entries: Vec::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<T>) -> ParamId {
        self.entries.push(Param { name: name.into(), value: Arc::new(value), frozen: false });
        ParamId(self.entries.len() - 1)
    }

    pub fn add_frozen(&mut self, name: impl Into<String>, value: Tensor<T>) -> ParamId {
        let id = self.add(name, value);
        self.entries[id.0].frozen = true;
        id
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

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.entries[id.0].value
    }

    pub fn entry(&self, index: usize) -> &Param<T> {
        &self.entries[index]
    }

    pub fn by_name(&self, name: &str) -> Option<&Param<T>> {
        self.entries.iter().find(|p| p.name == name)
    }

    /// Mutable access; clones the tensor only if a live graph still shares it.
    pub fn tensor_mut(&mut self, index: usize) -> &mut Tensor<T> {
        Arc::make_mut(&mut self.entries[index].value)
    }

    pub fn set_frozen(&mut self, index: usize, frozen: bool) {
        self.entries[index].frozen = frozen;
    }

    pub fn num_scalars(&self) -> usize {
        self.entries.iter().map(|p| p.value.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.entries.iter().all(|p| p.value.all_finite())
    }

    /// Binds every tensor as a graph leaf; with `track` false (or for frozen
    /// tensors) the leaves carry no gradient.
    pub fn bind(&self, g: &Graph<T>, track: bool) -> Bound {
        let tracked: Vec<bool> = self.entries.iter().map(|p| track && !p.frozen).collect();
        let vars = self
            .entries
            .iter()
            .zip(&tracked)
            .map(|(p, &t)| g.leaf(Arc::clone(&p.value), t))
            .collect();
        Bound { vars, tracked }
    }

    /// Flattened copy of all parameters (in order), for gradient verification.
    pub fn flatten(&self) -> Vec<T> {
        self.entries.iter().flat_map(|p| p.value.data().iter().copied()).collect()
    }

    /// Inverse of [`ParamSet::flatten`].
    pub fn assign_flat(&mut self, flat: &[T]) {
        assert_eq!(flat.len(), self.num_scalars(), "flat parameter length mismatch");
        let mut off = 0;
        for i in 0..self.entries.len() {
            let t = self.tensor_mut(i);
            let n = t.len();
            t.data_mut().copy_from_slice(&flat[off..off + n]);
            off += n;
        }
    }

    pub fn cast<U: Float>(&self) -> ParamSet<U> {
        ParamSet {
            entries: self
                .entries
                .iter()
                .map(|p| Param { name: p.name.clone(), value: Arc::new(p.value.cast()), frozen: p.frozen })
                .collect(),
        }
    }
}

/// `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`, the usual default for dense and conv layers.
pub fn uniform_fan_in<T: Float>(shape: &[usize], fan_in: usize, rng: &mut Rng) -> Tensor<T> {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| T::from_f64_lossy(rng.random_range(-bound..bound))).collect();
    Tensor::new(shape, data)
}

/// `U(-b, b)` with `b = sqrt(6 / (fan_in + fan_out))`.
pub fn glorot_uniform<T: Float>(shape: &[usize], fan_in: usize, fan_out: usize, rng: &mut Rng) -> Tensor<T> {
    let bound = (6.0 / (fan_in + fan_out).max(1) as f64).sqrt();
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| T::from_f64_lossy(rng.random_range(-bound..bound))).collect();
    Tensor::new(shape, data)
}

/// `N(0, std^2)` entries; `std == 0` gives exact zeros.
pub fn normal<T: Float>(shape: &[usize], std: f64, rng: &mut Rng) -> Tensor<T> {
    let n: usize = shape.iter().product();
    if std == 0.0 {
        return Tensor::zeros(shape);
    }
    let dist = Normal::new(0.0, std).expect("finite std");
    Tensor::new(shape, (0..n).map(|_| T::from_f64_lossy(dist.sample(rng))).collect())
}
