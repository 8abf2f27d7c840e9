use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectral::catalog::N_SPECIES;
use crate::spectral::dataset::TrainPartition;

/// Floor applied to per-wavelength standard deviations.
pub const STD_FLOOR: f64 = 1e-8;
/// Percentile of `|flux|` used as the asinh scale.
pub const BETA_PERCENTILE: f64 = 0.9;

pub fn asinh_transform(y: f64, beta: f64) -> Result<f64> {
    check_beta(beta)?;
    Ok((y / beta).asinh())
}

pub fn inverse_asinh_transform(y: f64, beta: f64) -> Result<f64> {
    check_beta(beta)?;
    Ok(beta * y.sinh())
}

fn check_beta(beta: f64) -> Result<()> {
    if beta > 0.0 && beta.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(format!("asinh scale must be positive, got {beta}")))
    }
}

/// Percentile `q ∈ [0, 1]` with linear interpolation between the closest
/// order statistics.
pub fn percentile(values: &[f64], q: f64) -> Result<f64> {
    if values.is_empty() || !(0.0..=1.0).contains(&q) {
        return Err(Error::invalid("percentile needs a nonempty sample and q in [0, 1]"));
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = q * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(v.len() - 1);
    Ok(v[lo] + (pos - lo as f64) * (v[hi] - v[lo]))
}

/// Per-wavelength z-score statistics plus per-species asinh scales, fitted
/// on training data only.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NormalizerState {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub beta: Vec<f64>,
}

impl NormalizerState {
    pub fn fit(train: &TrainPartition<'_>) -> Result<Self> {
        let n = train.len();
        if n < 2 {
            return Err(Error::invalid(format!("normalizer needs at least 2 training samples, got {n}")));
        }
        let w = train.dataset().n_wavelengths();
        let mut mean = vec![0.0; w];
        for i in train.indices() {
            for (m, &x) in mean.iter_mut().zip(train.dataset().spectrum(i)) {
                *m += x as f64;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        let mut var = vec![0.0; w];
        for i in train.indices() {
            for ((v, &x), m) in var.iter_mut().zip(train.dataset().spectrum(i)).zip(&mean) {
                *v += (x as f64 - m).powi(2);
            }
        }
        let std = var.iter().map(|v| (v / n as f64).sqrt().max(STD_FLOOR)).collect();
        let mut beta = Vec::with_capacity(N_SPECIES);
        for s in 0..N_SPECIES {
            let abs: Vec<f64> = train.indices().map(|i| train.dataset().fluxes(i)[s].abs()).collect();
            let b = percentile(&abs, BETA_PERCENTILE)?;
            // a species that is zero in 90% of training rows has no scale to learn
            beta.push(if b > 0.0 { b } else { 1.0 });
        }
        Ok(Self { mean, std, beta })
    }

    pub fn n_wavelengths(&self) -> usize {
        self.mean.len()
    }

    pub fn apply(&self, spectrum: &[f64]) -> Result<Vec<f64>> {
        self.check_len(spectrum.len())?;
        Ok(spectrum.iter().zip(&self.mean).zip(&self.std).map(|((x, m), s)| (x - m) / s).collect())
    }

    pub fn invert(&self, z: &[f64]) -> Result<Vec<f64>> {
        self.check_len(z.len())?;
        Ok(z.iter().zip(&self.mean).zip(&self.std).map(|((x, m), s)| x * s + m).collect())
    }

    fn check_len(&self, len: usize) -> Result<()> {
        if len == self.mean.len() {
            Ok(())
        } else {
            Err(Error::invalid(format!("spectrum has {len} points, normalizer expects {}", self.mean.len())))
        }
    }

    pub fn transform_fluxes(&self, fluxes: &[f64]) -> Result<Vec<f64>> {
        fluxes.iter().zip(&self.beta).map(|(&y, &b)| asinh_transform(y, b)).collect()
    }

    pub fn inverse_fluxes(&self, targets: &[f64]) -> Result<Vec<f64>> {
        targets.iter().zip(&self.beta).map(|(&y, &b)| inverse_asinh_transform(y, b)).collect()
    }
}
