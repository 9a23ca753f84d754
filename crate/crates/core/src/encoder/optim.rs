use std::collections::HashMap;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    #[default]
    AdamW,
    Sgd,
}

#[derive(Debug, Clone, Default)]
struct Slot {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

/// Optimizer with per-parameter state created on first update.
///
/// Parameters that receive no gradient in a step are left untouched, so
/// AdamW's bias correction counts updates per parameter.
#[derive(Debug, Clone)]
pub struct Optimizer {
    kind: OptimizerKind,
    lr: f64,
    weight_decay: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    slots: HashMap<String, Slot>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64, weight_decay: f64) -> Self {
        Self {
            kind,
            lr,
            weight_decay,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            slots: HashMap::new(),
        }
    }

    pub fn learning_rate(&self) -> f64 {
        self.lr
    }

    pub fn update(&mut self, key: &str, param: &mut [f64], grad: &[f64]) {
        debug_assert_eq!(param.len(), grad.len());
        match self.kind {
            OptimizerKind::Sgd => {
                for (p, g) in param.iter_mut().zip(grad) {
                    *p -= self.lr * g;
                }
            }
            OptimizerKind::AdamW => {
                let slot = self.slots.entry(key.to_owned()).or_insert_with(|| Slot {
                    m: vec![0.0; param.len()],
                    v: vec![0.0; param.len()],
                    t: 0,
                });
                slot.t += 1;
                let c1 = 1.0 - self.beta1.powi(slot.t);
                let c2 = 1.0 - self.beta2.powi(slot.t);
                for i in 0..param.len() {
                    let g = grad[i];
                    slot.m[i] = self.beta1 * slot.m[i] + (1.0 - self.beta1) * g;
                    slot.v[i] = self.beta2 * slot.v[i] + (1.0 - self.beta2) * g * g;
                    let m_hat = slot.m[i] / c1;
                    let v_hat = slot.v[i] / c2;
                    param[i] -= self.lr * (m_hat / (v_hat.sqrt() + self.eps) + self.weight_decay * param[i]);
                }
            }
        }
    }
}
