//! Adam optimizer with decoupled weight decay.

use serde::{Deserialize, Serialize};

use super::graph::Gradients;
use super::store::ParamStore;
use super::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            weight_decay: 0.01,
        }
    }
}

/// First/second moment estimates for every parameter in a store, plus the
/// shared step counter. Moments are kept in registration order.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub config: AdamConfig,
    step: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl AdamState {
    pub fn new(store: &ParamStore, config: AdamConfig) -> Self {
        let m = store.iter().map(|(_, _, t)| Tensor::zeros(t.shape())).collect();
        let v = store.iter().map(|(_, _, t)| Tensor::zeros(t.shape())).collect();
        AdamState { config, step: 0, m, v }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One optimizer step. Parameters without a gradient entry are left
    /// untouched (their moments do not advance either). The update is
    ///
    /// p ← p − lr · ( m̂ / (√v̂ + ε) + wd · p )
    ///
    /// with bias-corrected moments m̂, v̂ and decay applied directly to the
    /// parameter rather than folded into the gradient.
    pub fn step(&mut self, store: &mut ParamStore, grads: &Gradients) {
        self.step += 1;
        let t = self.step as f64;
        let c = self.config;
        let bc1 = 1.0 - c.beta1.powf(t);
        let bc2 = 1.0 - c.beta2.powf(t);
        for id in store.ids().collect::<Vec<_>>() {
            let Some(grad) = grads.get(id) else { continue };
            let idx = id.index();
            let param = store.get_mut(id);
            debug_assert_eq!(grad.shape(), param.shape(), "adam_step: shape mismatch");
            let m = self.m[idx].data_mut();
            let v = self.v[idx].data_mut();
            for ((p, &g), (mi, vi)) in param
                .data_mut()
                .iter_mut()
                .zip(grad.data())
                .zip(m.iter_mut().zip(v.iter_mut()))
            {
                *mi = c.beta1 * *mi + (1.0 - c.beta1) * g;
                *vi = c.beta2 * *vi + (1.0 - c.beta2) * g * g;
                let m_hat = *mi / bc1;
                let v_hat = *vi / bc2;
                *p -= c.learning_rate * (m_hat / (v_hat.sqrt() + c.epsilon) + c.weight_decay * *p);
            }
        }
    }
}
