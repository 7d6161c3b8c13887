use serde::{Deserialize, Serialize};

use crate::error::{Result, StampError};
use crate::model::StampParams;
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.05,
        }
    }
}

/// AdamW with bias-corrected moments and decoupled weight decay.
#[derive(Clone, Debug)]
pub struct AdamW<F> {
    pub config: AdamWConfig,
    step: u64,
    first: StampParams<Tensor<F>>,
    second: StampParams<Tensor<F>>,
}

impl<F: Scalar> AdamW<F> {
    pub fn new(config: AdamWConfig, params: &StampParams<Tensor<F>>) -> Self {
        Self {
            config,
            step: 0,
            first: params.zeros_like(),
            second: params.zeros_like(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// One update. Every gradient is checked before any parameter changes;
    /// a non-finite gradient aborts the step and names its table.
    pub fn step(
        &mut self,
        params: &mut StampParams<Tensor<F>>,
        grads: &StampParams<Tensor<F>>,
        lr: f64,
    ) -> Result<()> {
        let grads = grads.named();
        for (name, g) in &grads {
            if !g.is_finite() {
                return Err(StampError::NonFiniteGradient {
                    table: name.clone(),
                });
            }
        }
        self.step += 1;
        let c = &self.config;
        let t = self.step as i32;
        let bc1 = 1.0 - c.beta1.powi(t);
        let bc2 = 1.0 - c.beta2.powi(t);
        let (b1, b2) = (F::from_f64c(c.beta1), F::from_f64c(c.beta2));
        let (one_b1, one_b2) = (F::one() - b1, F::one() - b2);
        let decay = F::from_f64c(1.0 - lr * c.weight_decay);
        let step_size = F::from_f64c(lr / bc1);
        let inv_bc2_sqrt = F::from_f64c(1.0 / bc2.sqrt());
        let eps = F::from_f64c(c.eps);

        let mut first = self.first.named_mut();
        let mut second = self.second.named_mut();
        for (i, (_, p)) in params.named_mut().into_iter().enumerate() {
            let g = grads[i].1.data();
            let m = first[i].1.data_mut();
            let v = second[i].1.data_mut();
            for (j, w) in p.data_mut().iter_mut().enumerate() {
                *w *= decay;
                m[j] = b1 * m[j] + one_b1 * g[j];
                v[j] = b2 * v[j] + one_b2 * g[j] * g[j];
                *w -= step_size * m[j] / (v[j].sqrt() * inv_bc2_sqrt + eps);
            }
        }
        Ok(())
    }
}
