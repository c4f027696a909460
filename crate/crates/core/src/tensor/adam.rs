use serde::{Deserialize, Serialize};

use super::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// A named trainable tensor. The gradient to apply lives in the tensor's
/// grad slot.
#[derive(Clone, Debug, PartialEq)]
pub struct Parameter<T> {
    pub name: String,
    pub value: Tensor<T>,
    pub frozen: bool,
}

impl<T: Scalar> Parameter<T> {
    pub fn new(name: impl Into<String>, value: Tensor<T>) -> Self {
        Parameter {
            name: name.into(),
            value,
            frozen: false,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        AdamConfig {
            lr,
            ..Self::default()
        }
    }
}

/// Adam with bias correction. Moments are laid out parallel to the
/// parameter list they were created from.
#[derive(Clone, Debug)]
pub struct AdamState<T> {
    pub step_count: u64,
    pub first_moment: Vec<Vec<T>>,
    pub second_moment: Vec<Vec<T>>,
    pub config: AdamConfig,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(params: &[Parameter<T>], config: AdamConfig) -> Result<Self> {
        if !(config.lr > 0.0) || !(config.epsilon > 0.0) {
            return Err(Error::Validation(format!(
                "adam lr {} and epsilon {} must be positive",
                config.lr, config.epsilon
            )));
        }
        for b in [config.beta1, config.beta2] {
            if !(b > 0.0 && b < 1.0) {
                return Err(Error::Validation(format!("adam beta {b} outside (0, 1)")));
            }
        }
        let zeros = || params.iter().map(|p| vec![T::zero(); p.value.len()]).collect();
        Ok(AdamState {
            step_count: 0,
            first_moment: zeros(),
            second_moment: zeros(),
            config,
        })
    }

    /// One update of every non-frozen parameter from its grad slot (a missing
    /// slot counts as a zero gradient). Nothing is modified on error.
    pub fn step(&mut self, params: &mut [Parameter<T>]) -> Result<()> {
        if params.len() != self.first_moment.len() {
            return Err(Error::dim("adam", "parameter count", self.first_moment.len(), params.len()));
        }
        for (p, m) in params.iter().zip(&self.first_moment) {
            if p.value.len() != m.len() {
                return Err(Error::dim("adam", p.name.clone(), m.len(), p.value.len()));
            }
            if !p.frozen {
                if let Some(g) = p.value.grad() {
                    if g.iter().any(|v| !v.is_finite()) {
                        return Err(Error::Numeric(format!("gradient of parameter {}", p.name)));
                    }
                }
            }
        }

        self.step_count += 1;
        let c = &self.config;
        let t = self.step_count as i32;
        let (b1, b2) = (T::c(c.beta1), T::c(c.beta2));
        let one = T::one();
        let bc1 = one - b1.powi(t);
        let bc2 = one - b2.powi(t);
        let (lr, eps) = (T::c(c.lr), T::c(c.epsilon));

        for ((p, m), v) in params
            .iter_mut()
            .zip(&mut self.first_moment)
            .zip(&mut self.second_moment)
        {
            if p.frozen {
                continue;
            }
            let grad = p.value.grad().map(<[T]>::to_vec);
            let values = p.value.data_mut();
            for i in 0..values.len() {
                let g = grad.as_ref().map_or(T::zero(), |g| g[i]);
                m[i] = b1 * m[i] + (one - b1) * g;
                v[i] = b2 * v[i] + (one - b2) * g * g;
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                values[i] = values[i] - lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
