use alloc::vec::Vec;

use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OptimizerConfig {
    Adam {
        lr: f64,
        #[serde(default = "default_beta1")]
        beta1: f64,
        #[serde(default = "default_beta2")]
        beta2: f64,
        #[serde(default = "default_eps")]
        eps: f64,
    },
    Sgd {
        lr: f64,
    },
}

fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_eps() -> f64 {
    1e-8
}

impl OptimizerConfig {
    pub fn adam(lr: f64) -> Self {
        OptimizerConfig::Adam {
            lr,
            beta1: default_beta1(),
            beta2: default_beta2(),
            eps: default_eps(),
        }
    }
}

/// First-order optimizer state for a fixed list of parameter tensors.
pub struct Optimizer<T> {
    config: OptimizerConfig,
    step: u32,
    first: Vec<Vec<T>>,
    second: Vec<Vec<T>>,
}

impl<T: Real> Optimizer<T> {
    pub fn new(config: OptimizerConfig) -> Self {
        Optimizer {
            config,
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    /// One update, `params[i] -= step(grads[i])`.
    pub fn step(&mut self, params: Vec<&mut Tensor<T>>, grads: &[Tensor<T>]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::invalid("optimizer", "parameter and gradient counts differ"));
        }
        for (p, g) in params.iter().zip(grads) {
            if p.shape() != g.shape() {
                return Err(Error::shapes("optimizer", p.shape(), g.shape()));
            }
        }
        self.step += 1;
        match self.config {
            OptimizerConfig::Sgd { lr } => {
                let lr = T::of(lr);
                for (p, g) in params.into_iter().zip(grads) {
                    for (w, &d) in p.data_mut().iter_mut().zip(g.data()) {
                        *w -= lr * d;
                    }
                }
            }
            OptimizerConfig::Adam { lr, beta1, beta2, eps } => {
                if self.first.is_empty() {
                    self.first = grads.iter().map(|g| alloc::vec![T::zero(); g.len()]).collect();
                    self.second = self.first.clone();
                }
                let t = self.step as i32;
                let c1 = 1.0 - libm::pow(beta1, t as f64);
                let c2 = 1.0 - libm::pow(beta2, t as f64);
                let (b1, b2) = (T::of(beta1), T::of(beta2));
                let step = T::of(lr * Float::sqrt(c2) / c1);
                let eps = T::of(eps * Float::sqrt(c2));
                for (((p, g), m), v) in params.into_iter().zip(grads).zip(&mut self.first).zip(&mut self.second) {
                    for (((w, &d), m), v) in p.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
                        *m = b1 * *m + (T::one() - b1) * d;
                        *v = b2 * *v + (T::one() - b2) * d * d;
                        *w -= step * *m / (v.sqrt() + eps);
                    }
                }
            }
        }
        Ok(())
    }
}
