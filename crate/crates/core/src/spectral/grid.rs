use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Parameters of a constant-resolving-power wavelength grid.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridParams {
    pub lambda_min_um: f64,
    pub lambda_max_um: f64,
    pub resolving_power: f64,
}

impl Default for GridParams {
    /// 0.2–2.5 µm at R = 140, which yields 355 points.
    fn default() -> Self {
        Self { lambda_min_um: 0.2, lambda_max_um: 2.5, resolving_power: 140.0 }
    }
}

/// Geometrically spaced wavelengths with ratio `1 + 1/R` between
/// neighbours, starting at `λ_min` and stopping at the last point `≤ λ_max`.
#[derive(Clone, Debug, PartialEq)]
pub struct WavelengthGrid {
    params: GridParams,
    points: Vec<f64>,
}

impl WavelengthGrid {
    pub fn build(params: GridParams) -> Result<Self> {
        let GridParams { lambda_min_um: lo, lambda_max_um: hi, resolving_power: r } = params;
        if !(lo > 0.0 && lo < hi && hi.is_finite()) {
            return Err(Error::invalid(format!(
                "wavelength bounds must satisfy 0 < min < max, got [{lo}, {hi}]"
            )));
        }
        if !(r > 0.0 && r.is_finite()) {
            return Err(Error::invalid(format!("resolving power must be positive, got {r}")));
        }
        let ratio = 1.0 + 1.0 / r;
        let mut points = Vec::new();
        let mut i = 0;
        loop {
            let p = lo * ratio.powi(i);
            if p > hi {
                break;
            }
            points.push(p);
            i += 1;
        }
        Ok(Self { params, points })
    }

    pub fn params(&self) -> GridParams {
        self.params
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn ratio(&self) -> f64 {
        1.0 + 1.0 / self.params.resolving_power
    }

    /// Index of the point closest to `lambda` in log-wavelength.
    pub fn nearest(&self, lambda: f64) -> usize {
        let target = lambda.ln();
        let mut best = 0;
        for (i, p) in self.points.iter().enumerate() {
            if (p.ln() - target).abs() < (self.points[best].ln() - target).abs() {
                best = i;
            }
        }
        best
    }
}
