use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::params::PolicyParams;

/// Bias-corrected Adam. `step` descends along `grad`; callers maximizing an
/// objective pass its negated gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam<T> {
    pub beta1: T,
    pub beta2: T,
    pub eps: T,
    m: Vec<T>,
    v: Vec<T>,
    t: u64,
}

impl<T: Scalar> Adam<T> {
    pub fn new(len: usize) -> Self {
        Self::with_betas(len, T::of(0.9), T::of(0.999), T::of(1e-8))
    }

    pub fn with_betas(len: usize, beta1: T, beta2: T, eps: T) -> Self {
        Adam {
            beta1,
            beta2,
            eps,
            m: vec![T::zero(); len],
            v: vec![T::zero(); len],
            t: 0,
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.t
    }

    pub fn step_slice(&mut self, params: &mut [T], grad: &[T], lr: T) -> Result<()> {
        if params.len() != self.m.len() || grad.len() != self.m.len() {
            return Err(Error::Shape(format!(
                "adam state for {} values, got params {} and gradient {}",
                self.m.len(),
                params.len(),
                grad.len()
            )));
        }
        self.t += 1;
        let t = self.t as i32;
        let c1 = T::one() - self.beta1.powi(t);
        let c2 = T::one() - self.beta2.powi(t);
        let (b1, b2) = (self.beta1, self.beta2);
        for (((x, &g), m), v) in params.iter_mut().zip(grad).zip(&mut self.m).zip(&mut self.v) {
            *m = b1 * *m + (T::one() - b1) * g;
            *v = b2 * *v + (T::one() - b2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *x -= lr * m_hat / (v_hat.sqrt() + self.eps);
        }
        Ok(())
    }

    pub fn step(&mut self, params: &mut PolicyParams<T>, grad: &PolicyParams<T>, lr: T) -> Result<()> {
        if params.layout().entries != grad.layout().entries {
            return Err(Error::Shape("gradient layout differs from parameters".into()));
        }
        self.step_slice(params.flat_mut(), grad.flat(), lr)
    }
}
