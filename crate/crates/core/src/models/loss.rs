use autodiff::{Graph, Real, Var};

use crate::config::LossMode;
use crate::error::{Error, Result};
use crate::models::layers::Ctx;
use crate::models::{Model, ModelOutput};

/// Variational objective: a per-sample data term plus `beta_kl · KL`.
///
/// `Mse` uses `(1/N) Σ ½‖y − ŷ‖²`; `Nll` uses the heteroscedastic Gaussian
/// NLL divided by `N`.
pub fn bcnn_loss<T: Real>(
    g: &Graph<T>,
    mean: Var,
    log_var: Var,
    target: Var,
    kl: Option<Var>,
    beta_kl: f64,
    mode: LossMode,
) -> Result<Var> {
    bcnn_loss_weighted(g, mean, log_var, target, kl, beta_kl, mode, 0.0)
}

/// [`bcnn_loss`] whose NLL terms are each weighted by the detached
/// predicted variance raised to `nll_beta` (zero gives the plain NLL). With
/// positive exponents the mean no longer stops learning where the head
/// reports large variance.
#[allow(clippy::too_many_arguments)]
pub fn bcnn_loss_weighted<T: Real>(
    g: &Graph<T>,
    mean: Var,
    log_var: Var,
    target: Var,
    kl: Option<Var>,
    beta_kl: f64,
    mode: LossMode,
    nll_beta: f64,
) -> Result<Var> {
    if !(beta_kl >= 0.0) {
        return Err(Error::invalid(format!("KL weight must be >= 0, got {beta_kl}")));
    }
    if !(0.0..=1.0).contains(&nll_beta) {
        return Err(Error::invalid(format!("nll_beta must lie in [0, 1], got {nll_beta}")));
    }
    let n = g.shape(target).first().copied().unwrap_or(1).max(1);
    let inv_n = T::lit(1.0 / n as f64);
    let data = match mode {
        LossMode::Mse => g.scale(g.sum(g.square(g.sub(mean, target)?)), T::lit(0.5) * inv_n),
        LossMode::Nll if nll_beta == 0.0 => g.scale(g.gaussian_nll_loss(mean, log_var, target)?, inv_n),
        LossMode::Nll => {
            let lv = g.value(log_var);
            let w = lv.map(|v| (v * T::lit(nll_beta)).exp());
            let sq = g.mul(g.square(g.sub(target, mean)?), g.exp(g.neg(log_var)))?;
            let terms = g.mul(g.add(log_var, sq)?, g.constant(w))?;
            g.scale(g.sum(terms), T::lit(0.5) * inv_n)
        }
    };
    match kl {
        Some(kl) if beta_kl > 0.0 => Ok(g.add(data, g.scale(kl, T::lit(beta_kl)))?),
        _ => Ok(data),
    }
}

/// Training loss of any model: MSE for point regressors, [`bcnn_loss`] for
/// the Bayesian CNN.
pub fn model_loss<T: Real>(
    model: &Model<T>,
    cx: &Ctx<'_, T>,
    out: &ModelOutput,
    target: Var,
    mode: LossMode,
    beta_kl: f64,
    nll_beta: f64,
) -> Result<Var> {
    match out.log_var {
        Some(lv) => {
            let kl = if beta_kl > 0.0 { model.kl(cx)? } else { None };
            bcnn_loss_weighted(cx.g, out.mean, lv, target, kl, beta_kl, mode, nll_beta)
        }
        None => Ok(cx.g.mse_loss(out.mean, target)?),
    }
}
