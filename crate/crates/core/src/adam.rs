//! Adam with decoupled weight decay.

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::math;
use crate::mlp::MlpParams;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub first_moment: MlpParams,
    pub second_moment: MlpParams,
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    /// Zeroed moments shaped like `params`, with β1 = 0.9, β2 = 0.999, ε = 1e-8.
    pub fn new(params: &MlpParams) -> Self {
        Self::with_hyper(params, 0.9, 0.999, 1e-8)
    }

    pub fn with_hyper(params: &MlpParams, beta1: f64, beta2: f64, eps: f64) -> Self {
        Self {
            first_moment: params.zeros_like(),
            second_moment: params.zeros_like(),
            step: 0,
            beta1,
            beta2,
            eps,
        }
    }

    /// One update. Weight decay is applied first as `p -= lr * weight_decay * p`.
    ///
    /// Fails without touching anything when a gradient is non-finite.
    pub fn step(
        &mut self,
        params: &mut MlpParams,
        grads: &MlpParams,
        lr: f64,
        weight_decay: f64,
    ) -> Result<()> {
        if !params.same_shape(grads) || !params.same_shape(&self.first_moment) {
            return Err(shape_err!("parameter, gradient and moment shapes differ"));
        }
        for (k, layer) in grads.layers().iter().enumerate() {
            let finite = layer.weight.as_slice().iter().all(|v| v.is_finite())
                && layer.bias.iter().all(|v| v.is_finite());
            if !finite {
                return Err(Error::NonFiniteGradient { layer: k });
            }
        }
        self.step += 1;
        let t = self.step as f64;
        let bias1 = 1.0 - math::powf(self.beta1, t);
        let bias2 = 1.0 - math::powf(self.beta2, t);
        let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
        let tensors = params
            .tensors_mut()
            .zip(grads.tensors())
            .zip(self.first_moment.tensors_mut())
            .zip(self.second_moment.tensors_mut());
        for (((p, g), m), v) in tensors {
            for i in 0..p.len() {
                p[i] -= lr * weight_decay * p[i];
                m[i] = b1 * m[i] + (1.0 - b1) * g[i];
                v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
                let m_hat = m[i] / bias1;
                let v_hat = v[i] / bias2;
                p[i] -= lr * m_hat / (math::sqrt(v_hat) + eps);
            }
        }
        Ok(())
    }
}
