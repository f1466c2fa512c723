//! Optimizers and the learning-rate warmup.

use alloc::vec::Vec;

use crate::float;
use crate::params::ParamStore;
use crate::tensor::Tensor;

/// Linear warmup from `start_lr` to `base_lr` over `warmup_steps`, then flat.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Warmup {
    pub base_lr: f64,
    pub start_lr: f64,
    pub warmup_steps: usize,
}

impl Default for Warmup {
    fn default() -> Self {
        Self {
            base_lr: 1e-4,
            start_lr: 1e-6,
            warmup_steps: 1000,
        }
    }
}

impl Warmup {
    pub fn lr(&self, step: usize) -> f64 {
        if self.warmup_steps == 0 || step >= self.warmup_steps {
            return self.base_lr;
        }
        let f = step as f64 / self.warmup_steps as f64;
        self.start_lr + f * (self.base_lr - self.start_lr)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OptimizerKind {
    Sgd,
    /// Adam with decoupled weight decay.
    Adam { beta1: f64, beta2: f64, eps: f64, weight_decay: f64 },
}

impl OptimizerKind {
    pub fn adam() -> Self {
        OptimizerKind::Adam {
            beta1: 0.9,
            beta2: 0.98,
            eps: 1e-6,
            weight_decay: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Optimizer {
    pub kind: OptimizerKind,
    pub step: usize,
    /// First and second moments, one entry per parameter, created lazily.
    pub m: Vec<Option<Tensor>>,
    pub v: Vec<Option<Tensor>>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind) -> Self {
        Self {
            kind,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn apply(&mut self, store: &mut ParamStore, grads: &[(usize, Tensor)], lr: f64) {
        self.step += 1;
        if self.m.len() < store.len() {
            self.m.resize(store.len(), None);
            self.v.resize(store.len(), None);
        }
        for (idx, g) in grads {
            if !store.trainable(*idx) {
                continue;
            }
            let p = store.tensor_mut(*idx);
            match self.kind {
                OptimizerKind::Sgd => {
                    p.data_mut().iter_mut().zip(g.data()).for_each(|(w, d)| *w -= lr * d);
                }
                OptimizerKind::Adam { beta1, beta2, eps, weight_decay } => {
                    let m = self.m[*idx].get_or_insert_with(|| Tensor::zeros(g.rows(), g.cols()));
                    let v = self.v[*idx].get_or_insert_with(|| Tensor::zeros(g.rows(), g.cols()));
                    let c1 = 1.0 - float::powf(beta1, self.step as f64);
                    let c2 = 1.0 - float::powf(beta2, self.step as f64);
                    for (((w, d), mi), vi) in p
                        .data_mut()
                        .iter_mut()
                        .zip(g.data())
                        .zip(m.data_mut())
                        .zip(v.data_mut())
                    {
                        *mi = beta1 * *mi + (1.0 - beta1) * d;
                        *vi = beta2 * *vi + (1.0 - beta2) * d * d;
                        let update = (*mi / c1) / (float::sqrt(*vi / c2) + eps);
                        *w -= lr * (update + weight_decay * *w);
                    }
                }
            }
        }
    }
}
