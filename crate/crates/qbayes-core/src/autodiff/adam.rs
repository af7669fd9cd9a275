//! Adam optimizer with bias correction.
//!
//! Standard update (Kingma & Ba 2015): exponential moving averages of
//! the gradient and its square, bias-corrected by `1 − βᵗ`, step size
//! `lr · m̂ / (√v̂ + ε)`. Defaults follow the usual convention:
//! `lr = 1e−3`, `β₁ = 0.9`, `β₂ = 0.999`, `ε = 1e−8`.

use serde::{Deserialize, Serialize};

use super::Tensor;

/// Optimizer state: first/second moments per parameter plus the step
/// counter. Serialized into checkpoints so training can resume with
/// the step counter intact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub step: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl AdamState {
    /// Fresh state shaped like `params`.
    pub fn new(params: &[Tensor], lr: f64) -> Self {
        AdamState {
            step: 0,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: params.iter().map(|p| Tensor::zeros(p.dim())).collect(),
            v: params.iter().map(|p| Tensor::zeros(p.dim())).collect(),
        }
    }

    /// One update in place. `grads[i]` must shape-match `params[i]`;
    /// a `1 × 1` gradient for a non-`1 × 1` parameter is the tape's
    /// "slot untouched" sentinel and is skipped.
    pub fn step(&mut self, params: &mut [Tensor], grads: &[Tensor]) {
        assert_eq!(params.len(), grads.len(), "param/grad count mismatch");
        self.step += 1;
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.lr, self.eps);
        let t = self.step as f64;
        let bc1 = 1.0 - b1.powf(t);
        let bc2 = 1.0 - b2.powf(t);
        for i in 0..params.len() {
            if grads[i].dim() != params[i].dim() {
                assert_eq!(
                    grads[i].dim(),
                    (1, 1),
                    "gradient {i} shape {:?} vs param {:?}",
                    grads[i].dim(),
                    params[i].dim()
                );
                continue;
            }
            self.m[i].zip_mut_with(&grads[i], |mx, &g| {
                *mx = b1 * *mx + (1.0 - b1) * g;
            });
            self.v[i].zip_mut_with(&grads[i], |vx, &g| {
                *vx = b2 * *vx + (1.0 - b2) * g * g;
            });
            ndarray::Zip::from(&mut params[i])
                .and(&self.m[i])
                .and(&self.v[i])
                .for_each(|p, &m, &v| {
                    let mhat = m / bc1;
                    let vhat = v / bc2;
                    *p -= lr * mhat / (vhat.sqrt() + eps);
                });
        }
    }
}
