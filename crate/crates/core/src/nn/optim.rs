//! Adam with decoupled weight decay. Setting `weight_decay = 0` recovers
//! plain Adam (used by the discriminator with betas (0.0, 0.9)).

use super::Param;
use crate::num::Real;

#[derive(Debug, Clone)]
pub struct AdamW<S: Real> {
    pub lr: S,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: S,
    pub step_count: u64,
}

impl<S: Real> AdamW<S> {
    pub fn new(lr: S, weight_decay: S) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            step_count: 0,
        }
    }

    pub fn with_betas(mut self, beta1: f64, beta2: f64) -> Self {
        self.beta1 = beta1;
        self.beta2 = beta2;
        self
    }

    /// One update over all parameters; gradients are consumed and cleared.
    pub fn step(&mut self, params: &mut [&mut Param<S>]) {
        self.step_count += 1;
        let t = self.step_count as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let b1 = S::of_f64(self.beta1);
        let b2 = S::of_f64(self.beta2);
        let one_m_b1 = S::of_f64(1.0 - self.beta1);
        let one_m_b2 = S::of_f64(1.0 - self.beta2);
        let eps = S::of_f64(self.eps);
        let inv_bc1 = S::of_f64(1.0 / bc1);
        let inv_bc2 = S::of_f64(1.0 / bc2);

        for param in params.iter_mut() {
            let v = param.v.as_slice_mut().expect("param contiguous");
            let g = param.g.as_slice_mut().expect("grad contiguous");
            let m1 = param.m1.as_slice_mut().expect("m1 contiguous");
            let m2 = param.m2.as_slice_mut().expect("m2 contiguous");
            for i in 0..v.len() {
                m1[i] = b1 * m1[i] + one_m_b1 * g[i];
                m2[i] = b2 * m2[i] + one_m_b2 * g[i] * g[i];
                let mhat = m1[i] * inv_bc1;
                let vhat = m2[i] * inv_bc2;
                v[i] = v[i]
                    - self.lr * (mhat / (vhat.sqrt() + eps))
                    - self.lr * self.weight_decay * v[i];
                g[i] = S::zero();
            }
        }
    }
}
