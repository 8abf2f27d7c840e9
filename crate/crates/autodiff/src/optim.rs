//! Adam with bias correction.

use crate::error::{Result, TensorError};
use crate::real::Real;
use crate::tensor::{shape_str, Tensor};

/// Optimizer state for a fixed, ordered list of parameters.
#[derive(Clone, Debug)]
pub struct Adam<T: Real> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Real> Adam<T> {
    /// Zero moments shaped like `params`, β₁ = 0.9, β₂ = 0.999, ε = 1e-8.
    pub fn new<'a>(lr: f64, params: impl IntoIterator<Item = &'a Tensor<T>>) -> Self {
        let m: Vec<Vec<T>> = params.into_iter().map(|p| vec![T::zero(); p.numel()]).collect();
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, step: 0, v: m.clone(), m }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Applies one update. A `None` gradient is treated as zero.
    pub fn step(&mut self, params: &mut [Tensor<T>], grads: &[Option<Tensor<T>>]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != params.len() {
            return Err(TensorError::shape(
                "adam_step",
                format!("{} parameters", self.m.len()),
                format!("{} parameters / {} gradients", params.len(), grads.len()),
            ));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.numel() != self.m[i].len() {
                return Err(TensorError::shape("adam_step", format!("{} elements", self.m[i].len()), shape_str(p.shape())));
            }
            if let Some(g) = g {
                if g.shape() != p.shape() {
                    return Err(TensorError::shape("adam_step", shape_str(p.shape()), shape_str(g.shape())));
                }
            }
        }
        self.step += 1;
        let (b1, b2) = (T::lit(self.beta1), T::lit(self.beta2));
        let bc1 = T::lit(1.0 - self.beta1.powi(self.step as i32));
        let bc2 = T::lit(1.0 - self.beta2.powi(self.step as i32));
        let (lr, eps) = (T::lit(self.lr), T::lit(self.eps));
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            let data = p.data_mut();
            match g {
                Some(g) => {
                    for (((w, &gi), mi), vi) in data.iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
                        *mi = b1 * *mi + (T::one() - b1) * gi;
                        *vi = b2 * *vi + (T::one() - b2) * gi * gi;
                        *w -= lr * (*mi / bc1) / ((*vi / bc2).sqrt() + eps);
                    }
                }
                None => {
                    for ((w, mi), vi) in data.iter_mut().zip(m.iter_mut()).zip(v.iter_mut()) {
                        *mi = b1 * *mi;
                        *vi = b2 * *vi;
                        *w -= lr * (*mi / bc1) / ((*vi / bc2).sqrt() + eps);
                    }
                }
            }
        }
        Ok(())
    }
}
