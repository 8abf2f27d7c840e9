use crate::error::{Result, TensorError};
use crate::graph::{Graph, Var};
use crate::real::Real;
use crate::tensor::{shape_str, Tensor};

impl<T: Real> Graph<T> {
    fn check_same(&self, op: &'static str, vars: &[Var]) -> Result<Vec<Tensor<T>>> {
        let vals: Vec<Tensor<T>> = vars.iter().map(|&v| self.value(v)).collect();
        for v in &vals[1..] {
            if v.shape() != vals[0].shape() {
                return Err(TensorError::shape(op, shape_str(vals[0].shape()), shape_str(v.shape())));
            }
        }
        Ok(vals)
    }

    /// Mean over all elements of `(pred - target)²`.
    pub fn mse_loss(&self, pred: Var, target: Var) -> Result<Var> {
        self.check_same("mse_loss", &[pred, target])?;
        let diff = self.sub(pred, target)?;
        Ok(self.mean(self.square(diff)))
    }

    /// Heteroscedastic Gaussian negative log-likelihood without the
    /// constant term: `½ Σ [log_var + (target − mean)² / exp(log_var)]`.
    pub fn gaussian_nll_loss(&self, mean: Var, log_var: Var, target: Var) -> Result<Var> {
        let vals = self.check_same("gaussian_nll_loss", &[mean, log_var, target])?;
        let (m, lv, t) = (vals[0].clone(), vals[1].clone(), vals[2].clone());
        let half = T::lit(0.5);
        let total = m
            .data()
            .iter()
            .zip(lv.data())
            .zip(t.data())
            .map(|((&mi, &li), &ti)| half * (li + (ti - mi) * (ti - mi) * (-li).exp()))
            .sum::<T>();
        Ok(self.op("gaussian_nll_loss", Tensor::scalar(total), &[mean, log_var, target], move |g, sink| {
            let g = g[0];
            let n = m.numel();
            // residual scaled by precision, reused by every operand
            let scaled: Vec<(T, T)> = (0..n)
                .map(|i| {
                    let r = t.data()[i] - m.data()[i];
                    (r, r * (-lv.data()[i]).exp())
                })
                .collect();
            if let Some(d) = sink.buffer(mean) {
                for (di, &(_, rp)) in d.iter_mut().zip(&scaled) {
                    *di -= g * rp;
                }
            }
            if let Some(d) = sink.buffer(log_var) {
                for (di, &(r, rp)) in d.iter_mut().zip(&scaled) {
                    *di += g * half * (T::one() - r * rp);
                }
            }
            if let Some(d) = sink.buffer(target) {
                for (di, &(_, rp)) in d.iter_mut().zip(&scaled) {
                    *di += g * rp;
                }
            }
        }))
    }

    /// `KL(N(mu, sigma²) ‖ N(0, 1))` summed over all elements:
    /// `Σ [ln(1/σ) + (σ² + μ²)/2 − 1/2]`.
    pub fn kl_diag_gaussian(&self, mu: Var, sigma: Var) -> Result<Var> {
        let vals = self.check_same("kl_diag_gaussian", &[mu, sigma])?;
        let (m, s) = (vals[0].clone(), vals[1].clone());
        if let Some(bad) = s.data().iter().find(|&&v| v <= T::zero() || v.is_nan()) {
            return Err(TensorError::invalid(
                "kl_diag_gaussian",
                format!("sigma must be positive, got {bad}"),
            ));
        }
        let half = T::lit(0.5);
        let total = m
            .data()
            .iter()
            .zip(s.data())
            .map(|(&mi, &si)| -si.ln() + half * (si * si + mi * mi) - half)
            .sum::<T>();
        Ok(self.op("kl_diag_gaussian", Tensor::scalar(total), &[mu, sigma], move |g, sink| {
            let g = g[0];
            if let Some(d) = sink.buffer(mu) {
                for (di, &mi) in d.iter_mut().zip(m.data()) {
                    *di += g * mi;
                }
            }
            if let Some(d) = sink.buffer(sigma) {
                for (di, &si) in d.iter_mut().zip(s.data()) {
                    *di += g * (si - T::one() / si);
                }
            }
        }))
    }
}
