//! Bias-corrected Adam update, one state per parameter tensor.

use super::{r, Real};
use crate::error::{Error, Result};

/// First/second moment estimates and step counter for one parameter.
#[derive(Debug, Clone)]
pub struct AdamState<R> {
    m: Vec<R>,
    v: Vec<R>,
    t: u64,
    beta1: R,
    beta2: R,
    eps: R,
}

impl<R: Real> AdamState<R> {
    pub fn new(len: usize) -> Self {
        Self::with_hyperparams(len, 0.9, 0.999, 1e-8)
    }

    pub fn with_hyperparams(len: usize, beta1: f64, beta2: f64, eps: f64) -> Self {
        AdamState {
            m: vec![R::zero(); len],
            v: vec![R::zero(); len],
            t: 0,
            beta1: r(beta1),
            beta2: r(beta2),
            eps: r(eps),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    /// One update: params <- params - lr * m_hat / (sqrt(v_hat) + eps).
    pub fn step(&mut self, params: &mut [R], grads: &[R], lr: R) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::shape(format!(
                "adam_step length mismatch: state {}, params {}, grads {}",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        if lr <= R::zero() {
            return Err(Error::invalid("adam_step lr must be > 0".to_string()));
        }
        self.t += 1;
        let one = R::one();
        let b1 = self.beta1;
        let b2 = self.beta2;
        let bc1 = one - b1.powi(self.t as i32);
        let bc2 = one - b2.powi(self.t as i32);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = b1 * self.m[i] + (one - b1) * g;
            self.v[i] = b2 * self.v[i] + (one - b2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] = params[i] - lr * m_hat / (v_hat.sqrt() + self.eps);
        }
        Ok(())
    }
}
