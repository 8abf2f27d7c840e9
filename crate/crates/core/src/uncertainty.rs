//! Monte Carlo predictive distributions and their calibration.

use std::path::Path;

use autodiff::Real;
use serde::Serialize;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::config::IntervalMode;
use crate::error::{Error, Result};
use crate::models::train::{predict_with, Prepared};
use crate::models::Model;
use crate::rng::mix;
use crate::spectral::{percentile, N_SPECIES, SPECIES};
use crate::stats::{pearson, render};

/// Rows per forward pass. Fixed so results do not depend on a caller's
/// batch size.
const MC_BATCH: usize = 128;

/// Entries with `|mean|` below this are left out of the mean CoV.
pub const COV_EPS: f64 = 1e-6;

/// Raw stochastic passes: `means[t][i * 8 + s]`.
#[derive(Clone, Debug, PartialEq)]
pub struct McSamples {
    pub n: usize,
    pub means: Vec<Vec<f64>>,
    pub log_vars: Option<Vec<Vec<f64>>>,
}

impl McSamples {
    pub fn passes(&self) -> usize {
        self.means.len()
    }
}

/// `passes` stochastic forward passes; pass `t` draws from a stream keyed by
/// `(seed, t)`, so the first `T` passes of a longer run match a run of `T`.
pub fn mc_predict<T: Real>(model: &Model<T>, data: &Prepared, passes: usize, seed: u64) -> Result<McSamples> {
    if passes < 2 {
        return Err(Error::invalid(format!("MC prediction needs at least 2 passes, got {passes}")));
    }
    let mode = model.mc_mode();
    let mut means = Vec::with_capacity(passes);
    let mut log_vars: Option<Vec<Vec<f64>>> = None;
    for t in 0..passes {
        let (m, lv) = predict_with(model, data, MC_BATCH, mode, mix(seed, t as u64))?;
        means.push(m);
        if let Some(lv) = lv {
            log_vars.get_or_insert_with(Vec::new).push(lv);
        }
    }
    Ok(McSamples { n: data.len(), means, log_vars })
}

/// Per-entry predictive moments, all `[N, 8]` row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct PredictiveDistribution {
    pub n: usize,
    pub passes: usize,
    pub mean: Vec<f64>,
    pub aleatoric_var: Vec<f64>,
    pub epistemic_var: Vec<f64>,
}

impl PredictiveDistribution {
    pub fn total_var(&self) -> Vec<f64> {
        self.aleatoric_var.iter().zip(&self.epistemic_var).map(|(a, e)| a + e).collect()
    }
}

/// Mean of the pass means, their population variance, and the mean
/// predicted variance when the model has a variance head.
pub fn decompose(s: &McSamples) -> Result<PredictiveDistribution> {
    let t = s.passes();
    if t < 2 {
        return Err(Error::invalid(format!("decomposition needs at least 2 passes, got {t}")));
    }
    let len = s.n * N_SPECIES;
    if s.means.iter().any(|m| m.len() != len) {
        return Err(Error::invalid("every pass must hold N x 8 means"));
    }
    let inv_t = 1.0 / t as f64;
    let mut mean = vec![0.0; len];
    for pass in &s.means {
        for (m, &v) in mean.iter_mut().zip(pass) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m *= inv_t);
    let mut epistemic_var = vec![0.0; len];
    for pass in &s.means {
        for ((e, &v), &m) in epistemic_var.iter_mut().zip(pass).zip(&mean) {
            *e += (v - m) * (v - m);
        }
    }
    epistemic_var.iter_mut().for_each(|e| *e *= inv_t);
    let mut aleatoric_var = vec![0.0; len];
    if let Some(lvs) = &s.log_vars {
        for pass in lvs {
            for (a, &lv) in aleatoric_var.iter_mut().zip(pass) {
                *a += lv.exp();
            }
        }
        aleatoric_var.iter_mut().for_each(|a| *a *= inv_t);
    }
    Ok(PredictiveDistribution { n: s.n, passes: t, mean, aleatoric_var, epistemic_var })
}

/// Two-sided standard-normal quantile for a central `level`.
pub fn z_score(level: f64) -> Result<f64> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::invalid(format!("interval level must lie in (0, 1), got {level}")));
    }
    let normal = Normal::standard();
    Ok(normal.inverse_cdf(0.5 * (1.0 + level)))
}

/// Gaussian interval `mean ± z·√total_var`.
pub fn credible_interval(dist: &PredictiveDistribution, level: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    let z = z_score(level)?;
    let total = dist.total_var();
    let half: Vec<f64> = total.iter().map(|v| z * v.sqrt()).collect();
    let lower = dist.mean.iter().zip(&half).map(|(m, h)| m - h).collect();
    let upper = dist.mean.iter().zip(&half).map(|(m, h)| m + h).collect();
    Ok((lower, upper))
}

/// Central interval from the Monte Carlo samples themselves: quantiles of
/// the equal-weight Gaussian mixture over passes, or of the pass means when
/// there is no variance head.
pub fn mc_quantile_interval(s: &McSamples, level: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    z_score(level)?;
    let (qlo, qhi) = (0.5 * (1.0 - level), 0.5 * (1.0 + level));
    let len = s.n * N_SPECIES;
    let mut lower = Vec::with_capacity(len);
    let mut upper = Vec::with_capacity(len);
    let normal = Normal::standard();
    for e in 0..len {
        let means: Vec<f64> = s.means.iter().map(|p| p[e]).collect();
        match &s.log_vars {
            None => {
                lower.push(percentile(&means, qlo)?);
                upper.push(percentile(&means, qhi)?);
            }
            Some(lvs) => {
                let sds: Vec<f64> = lvs.iter().map(|p| (0.5 * p[e]).exp()).collect();
                let cdf = |x: f64| {
                    means.iter().zip(&sds).map(|(m, s)| normal.cdf((x - m) / s)).sum::<f64>() / means.len() as f64
                };
                let lo = means.iter().zip(&sds).map(|(m, s)| m - 10.0 * s).fold(f64::INFINITY, f64::min);
                let hi = means.iter().zip(&sds).map(|(m, s)| m + 10.0 * s).fold(f64::NEG_INFINITY, f64::max);
                lower.push(bisect(cdf, qlo, lo, hi));
                upper.push(bisect(cdf, qhi, lo, hi));
            }
        }
    }
    Ok((lower, upper))
}

fn bisect(f: impl Fn(f64) -> f64, target: f64, mut lo: f64, mut hi: f64) -> f64 {
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if f(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Interval under the configured construction.
pub fn interval(
    mode: IntervalMode,
    samples: &McSamples,
    dist: &PredictiveDistribution,
    level: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    match mode {
        IntervalMode::Gaussian => credible_interval(dist, level),
        IntervalMode::McQuantile => mc_quantile_interval(samples, level),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CalibrationReport {
    pub coverage_1sigma: f64,
    pub coverage_2sigma: f64,
    /// Mean predictive standard deviation.
    pub sharpness: f64,
    /// `None` when every mean is within [`COV_EPS`] of zero.
    pub mean_cov: Option<f64>,
    /// `None` when the predictive std or the absolute error is constant.
    pub unc_err_corr: Option<f64>,
    pub entries: usize,
}

pub fn calibration_report(dist: &PredictiveDistribution, truth: &[f64]) -> Result<CalibrationReport> {
    let len = dist.mean.len();
    if truth.len() != len {
        return Err(Error::invalid(format!("truth has {} entries, predictions {len}", truth.len())));
    }
    if dist.n < 2 {
        return Err(Error::invalid("calibration needs at least 2 samples"));
    }
    let sd: Vec<f64> = dist.total_var().iter().map(|v| v.sqrt()).collect();
    let err: Vec<f64> = truth.iter().zip(&dist.mean).map(|(t, m)| (t - m).abs()).collect();
    let within = |k: f64| err.iter().zip(&sd).filter(|(e, s)| **e <= k * **s).count() as f64 / len as f64;
    let covs: Vec<f64> = dist.mean.iter().zip(&sd).filter(|(m, _)| m.abs() > COV_EPS).map(|(m, s)| s / m.abs()).collect();
    Ok(CalibrationReport {
        coverage_1sigma: within(1.0),
        coverage_2sigma: within(2.0),
        sharpness: sd.iter().sum::<f64>() / len as f64,
        mean_cov: (!covs.is_empty()).then(|| covs.iter().sum::<f64>() / covs.len() as f64),
        unc_err_corr: pearson(&sd, &err),
        entries: len,
    })
}

impl CalibrationReport {
    /// Two-column `metric,value` CSV.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["metric", "value"])?;
        let rows = [
            ("coverage_1sigma", Some(self.coverage_1sigma)),
            ("coverage_2sigma", Some(self.coverage_2sigma)),
            ("sharpness", Some(self.sharpness)),
            ("mean_cov", self.mean_cov),
            ("unc_err_corr", self.unc_err_corr),
            ("entries", Some(self.entries as f64)),
        ];
        for (k, v) in rows {
            w.write_record([k.to_string(), render(v)])?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Prediction dump, one row per (sample, species).
pub fn write_predictions(
    path: &Path,
    sample_ids: &[usize],
    dist: &PredictiveDistribution,
    lower: &[f64],
    upper: &[f64],
    truth: &[f64],
) -> Result<()> {
    if sample_ids.len() != dist.n || truth.len() != dist.mean.len() {
        return Err(Error::invalid("prediction dump inputs disagree in size"));
    }
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["sample_id", "species", "mean", "aleatoric_var", "epistemic_var", "lower95", "upper95", "truth"])?;
    for (i, id) in sample_ids.iter().enumerate() {
        for (s, name) in SPECIES.iter().enumerate() {
            let e = i * N_SPECIES + s;
            w.write_record([
                id.to_string(),
                name.to_string(),
                dist.mean[e].to_string(),
                dist.aleatoric_var[e].to_string(),
                dist.epistemic_var[e].to_string(),
                lower[e].to_string(),
                upper[e].to_string(),
                truth[e].to_string(),
            ])?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}
