use serde::{Deserialize, Serialize};

use crate::model::Model;

/// Adam with decoupled weight decay: `p <- p (1 - lr wd)` followed by the
/// bias-corrected Adam step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamW {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamW {
    pub fn new(lr: f64, weight_decay: f64) -> Self {
        AdamW {
            lr,
            weight_decay,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Apply one update from the gradients currently stored in `model`.
    /// With `head_only`, parameters outside the classifier head are left
    /// untouched.
    pub fn step(&mut self, model: &mut Model, head_only: bool) {
        self.step += 1;
        let t = self.step as i32;
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = 1.0 - b1.powi(t);
        let c2 = 1.0 - b2.powi(t);
        let decay = 1.0 - self.lr * self.weight_decay;
        let (lr, eps) = (self.lr, self.eps);
        let (ms, vs) = (&mut self.m, &mut self.v);
        let mut k = 0;
        model.for_each_param(|p, is_head| {
            if ms.len() <= k {
                ms.push(vec![0.0; p.len()]);
                vs.push(vec![0.0; p.len()]);
            }
            if !head_only || is_head {
                let (m, v) = (&mut ms[k], &mut vs[k]);
                for i in 0..p.value.len() {
                    let g = p.grad[i];
                    m[i] = b1 * m[i] + (1.0 - b1) * g;
                    v[i] = b2 * v[i] + (1.0 - b2) * g * g;
                    let mhat = m[i] / c1;
                    let vhat = v[i] / c2;
                    p.value[i] = p.value[i] * decay - lr * mhat / (vhat.sqrt() + eps);
                }
            }
            k += 1;
        });
    }
}
