//! Adam optimizer with bias-corrected moments. Defaults: beta1 = 0.9,
//! beta2 = 0.999, eps = 1e-8, learning rate 1e-4.

use crate::autodiff::Parameter;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub struct Adam<T: Scalar> {
    pub lr: T,
    pub beta1: T,
    pub beta2: T,
    pub eps: T,
    step: u64,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Scalar> Adam<T> {
    /// Moment buffers are allocated to match `params`; every later
    /// `step` must pass the same parameters in the same order.
    pub fn new(params: &[&Parameter<T>], lr: f64) -> Self {
        Adam {
            lr: T::c(lr),
            beta1: T::c(0.9),
            beta2: T::c(0.999),
            eps: T::c(1e-8),
            step: 0,
            m: params.iter().map(|p| vec![T::zero(); p.numel()]).collect(),
            v: params.iter().map(|p| vec![T::zero(); p.numel()]).collect(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// One update. `grads[i]` is the gradient for `params[i]`; `None`
    /// means zero gradient (parameter untouched by the loss).
    pub fn step(&mut self, params: &[&Parameter<T>], grads: &[Option<Tensor<T>>]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != params.len() {
            return Err(Error::Usage(format!(
                "adam step with {} params / {} grads, optimizer built for {}",
                params.len(),
                grads.len(),
                self.m.len()
            )));
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = T::one() - self.beta1.powi(t);
        let bc2 = T::one() - self.beta2.powi(t);
        for ((p, g), (m, v)) in params
            .iter()
            .zip(grads.iter())
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            let Some(g) = g else { continue };
            if g.numel() != p.numel() {
                return Err(Error::Dimension(format!(
                    "adam: grad for {} has {} elements, parameter has {}",
                    p.name(),
                    g.numel(),
                    p.numel()
                )));
            }
            let old = p.value();
            let mut new = old.to_vec();
            for (i, (&gi, w)) in g.data().iter().zip(new.iter_mut()).enumerate() {
                m[i] = self.beta1 * m[i] + (T::one() - self.beta1) * gi;
                v[i] = self.beta2 * v[i] + (T::one() - self.beta2) * gi * gi;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                *w = *w - self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
            p.set(Tensor::from_vec(old.shape().to_vec(), new)?)?;
        }
        Ok(())
    }
}
