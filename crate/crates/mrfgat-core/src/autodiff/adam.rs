//! Adam optimizer with bias-corrected first and second moments.

use crate::autodiff::params::ParamStore;
use crate::autodiff::tensor::Tensor;

/// Hyper-parameters; `lr` is the base rate before any schedule scaling.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Per-parameter moment estimates, parallel to the store by index.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub t: u64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

impl AdamState {
    pub fn new(store: &ParamStore) -> Self {
        let m = store
            .iter()
            .map(|(_, p)| Tensor::zeros(p.value.shape()))
            .collect::<Vec<_>>();
        let v = m.clone();
        Self { t: 0, m, v }
    }

    /// One update from the gradients currently accumulated in `store`,
    /// applied at the effective rate `lr` (schedule already folded in).
    /// Gradients are zeroed afterward, ready for the next accumulation.
    pub fn step(&mut self, store: &mut ParamStore, cfg: &AdamConfig, lr: f64) {
        assert_eq!(self.m.len(), store.len(), "optimizer/state layout mismatch");
        self.t += 1;
        let bc1 = 1.0 - cfg.beta1.powi(self.t as i32);
        let bc2 = 1.0 - cfg.beta2.powi(self.t as i32);
        for (i, (_, p)) in store.iter_mut().enumerate() {
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            let g = p.grad.data_mut();
            for ((m, v), (g, w)) in m
                .iter_mut()
                .zip(v.iter_mut())
                .zip(g.iter_mut().zip(p.value.data_mut()))
            {
                *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * *g;
                *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * *g * *g;
                let m_hat = *m / bc1;
                let v_hat = *v / bc2;
                *w -= lr * m_hat / (v_hat.sqrt() + cfg.eps);
                *g = 0.0;
            }
        }
    }
}
