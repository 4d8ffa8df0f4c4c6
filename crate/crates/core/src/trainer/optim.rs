use serde::{Deserialize, Serialize};

use crate::encoder::round_f32;

/// Adaptive moment estimation with decoupled weight decay.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl AdamW {
    pub fn new(len: usize) -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: vec![0.0; len],
            v: vec![0.0; len],
        }
    }

    /// One update. `decay[i]` says whether parameter `i` receives weight
    /// decay; `active` limits the update to a subset (frozen entries are left
    /// untouched, moments included). With `round` set, parameters and
    /// moments are rounded to `f32` afterwards.
    pub fn update(
        &mut self,
        params: &mut [f64],
        grads: &[f64],
        lr: f64,
        weight_decay: f64,
        decay: &[bool],
        active: Option<&[bool]>,
        round: bool,
    ) {
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for i in 0..params.len() {
            if active.is_some_and(|a| !a[i]) {
                continue;
            }
            let g = grads[i];
            let mut m = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            let mut v = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let mut p = params[i];
            let wd = if decay[i] { weight_decay } else { 0.0 };
            p -= lr * ((m / c1) / ((v / c2).sqrt() + self.eps) + wd * p);
            if round {
                p = round_f32(p);
                m = round_f32(m);
                v = round_f32(v);
            }
            params[i] = p;
            self.m[i] = m;
            self.v[i] = v;
        }
    }
}

pub fn global_norm(grads: &[f64]) -> f64 {
    grads.iter().map(|g| g * g).sum::<f64>().sqrt()
}

/// Scale gradients so their global L2 norm is at most `max_norm`. Returns
/// the norm before clipping.
pub fn clip_global_norm(grads: &mut [f64], max_norm: f64) -> f64 {
    let norm = global_norm(grads);
    if norm > max_norm && norm > 0.0 {
        let scale = max_norm / norm;
        for g in grads.iter_mut() {
            *g *= scale;
        }
    }
    norm
}
