//! Adaptive-moment (Adam) optimizer.

use crate::networks::ParamSet;
use crate::tensor::{Float, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    /// Lower first-moment decay for the adversarial pair; with 0.9 the
    /// discriminator wins before the generator leaves its initial blur.
    pub const GAN: Self = Self { lr: 0.002, beta1: 0.5, beta2: 0.999, eps: 1e-8 };
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 0.002, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

#[derive(Clone, Debug)]
pub struct Adam<T> {
    pub config: AdamConfig,
    step: u64,
    first: Vec<Option<Tensor<T>>>,
    second: Vec<Option<Tensor<T>>>,
}

/// Raised when a gradient contains NaN or infinity; parameters are left untouched.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NonFiniteGradient;

impl<T: Float> Adam<T> {
    pub fn new(config: AdamConfig) -> Self {
        Self { config, step: 0, first: Vec::new(), second: Vec::new() }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies one update. `grads[i]` pairs with parameter `i`; `None` and
    /// frozen entries are skipped.
    pub fn step(
        &mut self,
        params: &mut ParamSet<T>,
        grads: &[Option<Tensor<T>>],
    ) -> Result<(), NonFiniteGradient> {
        assert_eq!(grads.len(), params.len(), "one gradient slot per parameter");
        if grads.iter().flatten().any(|g| !g.all_finite()) {
            return Err(NonFiniteGradient);
        }
        if self.first.len() < params.len() {
            self.first.resize(params.len(), None);
            self.second.resize(params.len(), None);
        }
        self.step += 1;
        let c = self.config;
        let bc1 = 1.0 - c.beta1.powi(self.step as i32);
        let bc2 = 1.0 - c.beta2.powi(self.step as i32);
        let (b1, b2) = (T::from_f64_lossy(c.beta1), T::from_f64_lossy(c.beta2));
        let step_size = T::from_f64_lossy(c.lr / bc1);
        let inv_bc2 = T::from_f64_lossy(1.0 / bc2);
        let eps = T::from_f64_lossy(c.eps);
        for (i, grad) in grads.iter().enumerate() {
            let Some(grad) = grad else { continue };
            if params.entry(i).frozen {
                continue;
            }
            let m = self.first[i].get_or_insert_with(|| Tensor::zeros(grad.shape()));
            let v = self.second[i].get_or_insert_with(|| Tensor::zeros(grad.shape()));
            let p = params.tensor_mut(i);
            for (((p, &g), m), v) in p
                .data_mut()
                .iter_mut()
                .zip(grad.data())
                .zip(m.data_mut().iter_mut())
                .zip(v.data_mut().iter_mut())
            {
                *m = b1 * *m + (T::one() - b1) * g;
                *v = b2 * *v + (T::one() - b2) * g * g;
                *p = *p - step_size * *m / ((*v * inv_bc2).sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimizes_a_quadratic() {
        let mut params = ParamSet::<f64>::new();
        params.add("x", Tensor::from_f64([2], &[3.0, -2.0]));
        let mut adam = Adam::new(AdamConfig { lr: 0.05, ..Default::default() });
        for _ in 0..2000 {
            let x = params.get(crate::networks::ParamId(0)).clone();
            let g = Tensor::new([2], x.data().iter().map(|v| 2.0 * v).collect());
            adam.step(&mut params, &[Some(g)]).unwrap();
        }
        assert!(params.flatten().iter().all(|v| v.abs() < 1e-3));
    }

    #[test]
    fn frozen_and_nonfinite() {
        let mut params = ParamSet::<f32>::new();
        params.add_frozen("a", Tensor::from_f64([1], &[1.0]));
        let mut adam = Adam::new(AdamConfig::default());
        adam.step(&mut params, &[Some(Tensor::from_f64([1], &[1.0]))]).unwrap();
        assert_eq!(params.flatten(), vec![1.0]);
        let bad = Tensor::from_f64([1], &[f64::NAN]);
        assert_eq!(adam.step(&mut params, &[Some(bad)]), Err(NonFiniteGradient));
    }
}
