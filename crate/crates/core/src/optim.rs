//! Adaptive-moment gradient descent with step decay.

use std::collections::BTreeMap;

use crate::nn::{ParamId, ParamKind, ParamStore};
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    moments: BTreeMap<ParamId, (Vec<f32>, Vec<f32>)>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            moments: BTreeMap::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Applies one update. `grads` may contain several entries per parameter;
    /// they are summed first.
    pub fn step<'g>(&mut self, store: &mut ParamStore, grads: impl IntoIterator<Item = (ParamId, &'g Tensor)>) {
        let mut summed: BTreeMap<ParamId, Tensor> = BTreeMap::new();
        for (id, g) in grads {
            if !store.is_trainable(id) {
                continue;
            }
            match summed.get_mut(&id) {
                Some(acc) => acc.add_assign(g),
                None => {
                    summed.insert(id, g.clone());
                }
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let step_size = (self.lr * bc2.sqrt() / bc1) as f32;
        let (b1, b2, eps) = (self.beta1 as f32, self.beta2 as f32, (self.eps * bc2.sqrt()) as f32);
        for (id, g) in summed {
            debug_assert_eq!(store.entry(id).kind, ParamKind::Weight);
            let n = g.len();
            let (m, v) = self
                .moments
                .entry(id)
                .or_insert_with(|| (vec![0.0; n], vec![0.0; n]));
            let w = store.value_mut(id).data_mut();
            for i in 0..n {
                let gi = g.data()[i];
                m[i] = b1 * m[i] + (1.0 - b1) * gi;
                v[i] = b2 * v[i] + (1.0 - b2) * gi * gi;
                w[i] -= step_size * m[i] / (v[i].sqrt() + eps);
            }
        }
    }
}

/// Multiplies the base step size by `factor` at each listed epoch.
#[derive(Clone, Debug, PartialEq)]
pub struct StepDecay {
    pub base_lr: f64,
    pub decay_epochs: Vec<usize>,
    pub factor: f64,
}

impl StepDecay {
    pub fn lr_at(&self, epoch: usize) -> f64 {
        let k = self.decay_epochs.iter().filter(|&&e| epoch >= e).count();
        self.base_lr * self.factor.powi(k as i32)
    }
}
