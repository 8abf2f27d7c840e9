use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectral::grid::GridParams;

/// Fixed species order of every flux vector.
pub const SPECIES: [&str; 8] = ["O2", "O3", "CH4", "N2O", "CO2", "H2O", "CO", "SO2"];
pub const N_SPECIES: usize = SPECIES.len();

/// One absorption band: Gaussian in log-wavelength.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Band {
    pub center_um: f64,
    pub half_width_um: f64,
    pub strength: f64,
}

impl Band {
    pub const fn new(center_um: f64, half_width_um: f64, strength: f64) -> Self {
        Self { center_um, half_width_um, strength }
    }

    /// Unit-height profile at `lambda`, Gaussian in `ln λ` with standard
    /// deviation `half_width / center`.
    pub fn profile(&self, lambda: f64) -> f64 {
        let sigma = self.half_width_um / self.center_um;
        let z = (lambda.ln() - self.center_um.ln()) / sigma;
        (-0.5 * z * z).exp()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpeciesSpec {
    pub name: String,
    /// Characteristic magnitude of sampled fluxes (molecules cm⁻² s⁻¹,
    /// synthetic units).
    pub flux_scale: f64,
    pub bands: Vec<Band>,
}

/// How flux vectors are drawn: `sign · scale · exp(u)`, `u` uniform over
/// `log_range`, negative with probability `sink_probability`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FluxSampling {
    pub log_range: [f64; 2],
    pub sink_probability: f64,
}

/// Smooth featureless reflectance with a Rayleigh-like blue rise.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Continuum {
    pub base: f64,
    pub rayleigh_amplitude: f64,
    pub rayleigh_reference_um: f64,
}

impl Continuum {
    pub fn at(&self, lambda: f64) -> f64 {
        let x = (self.rayleigh_reference_um / lambda).powi(4);
        self.base + self.rayleigh_amplitude * x / (1.0 + x)
    }
}

/// Species table plus the knobs of the synthetic spectrum generator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpeciesCatalog {
    pub species: Vec<SpeciesSpec>,
    pub sampling: FluxSampling,
    pub continuum: Continuum,
    /// Divisor inside the saturating depth map; larger values saturate later.
    pub depth_softness: f64,
}

impl Default for SpeciesCatalog {
    fn default() -> Self {
        let spec = |name: &str, flux_scale: f64, bands: &[Band]| SpeciesSpec {
            name: name.to_string(),
            flux_scale,
            bands: bands.to_vec(),
        };
        Self {
            species: vec![
                spec("O2", 1e11, &[Band::new(0.76, 0.006, 0.9), Band::new(0.69, 0.005, 0.35), Band::new(1.27, 0.01, 0.4)]),
                spec("O3", 1e9, &[Band::new(0.255, 0.02, 0.9), Band::new(0.60, 0.05, 0.3)]),
                spec("CH4", 1e11, &[Band::new(2.30, 0.03, 0.9), Band::new(1.70, 0.025, 0.6), Band::new(0.89, 0.008, 0.4)]),
                spec("N2O", 1e9, &[Band::new(2.11, 0.02, 0.6), Band::new(2.47, 0.02, 0.5)]),
                spec("CO2", 1e10, &[Band::new(2.00, 0.02, 0.8), Band::new(2.06, 0.015, 0.6), Band::new(1.60, 0.015, 0.5)]),
                spec(
                    "H2O",
                    1e12,
                    &[Band::new(0.94, 0.015, 0.5), Band::new(1.10, 0.02, 0.7), Band::new(1.40, 0.03, 0.9), Band::new(1.90, 0.035, 0.9)],
                ),
                spec("CO", 1e10, &[Band::new(2.35, 0.025, 0.7), Band::new(1.57, 0.018, 0.5)]),
                spec("SO2", 1e9, &[Band::new(0.29, 0.012, 0.8), Band::new(0.21, 0.006, 0.5)]),
            ],
            sampling: FluxSampling { log_range: [-3.0, 3.0], sink_probability: 0.02 },
            continuum: Continuum { base: 0.2, rayleigh_amplitude: 0.15, rayleigh_reference_um: 0.45 },
            depth_softness: 3.0,
        }
    }
}

impl SpeciesCatalog {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let catalog: Self =
            serde_json::from_str(&text).map_err(|e| Error::invalid(format!("{}: invalid catalog: {e}", path.display())))?;
        Ok(catalog)
    }

    /// Checks species order, band placement and sampling parameters.
    pub fn validate(&self, grid: &GridParams) -> Result<()> {
        let names: Vec<&str> = self.species.iter().map(|s| s.name.as_str()).collect();
        if names != SPECIES {
            return Err(Error::invalid(format!("catalog species must be {SPECIES:?} in order, got {names:?}")));
        }
        for s in &self.species {
            if !(s.flux_scale >= 0.0 && s.flux_scale.is_finite()) {
                return Err(Error::invalid(format!("{}: flux_scale must be finite and >= 0", s.name)));
            }
            for b in &s.bands {
                if !(grid.lambda_min_um..=grid.lambda_max_um).contains(&b.center_um) {
                    return Err(Error::invalid(format!(
                        "{}: band center {} µm outside [{}, {}]",
                        s.name, b.center_um, grid.lambda_min_um, grid.lambda_max_um
                    )));
                }
                if !(b.strength >= 0.0) || !(b.half_width_um > 0.0) {
                    return Err(Error::invalid(format!(
                        "{}: band at {} µm needs strength >= 0 and half-width > 0",
                        s.name, b.center_um
                    )));
                }
            }
        }
        let [lo, hi] = self.sampling.log_range;
        if !(lo <= hi && lo.is_finite() && hi.is_finite()) {
            return Err(Error::invalid(format!("sampling log_range must be ordered, got [{lo}, {hi}]")));
        }
        if !(0.0..=1.0).contains(&self.sampling.sink_probability) {
            return Err(Error::invalid("sink_probability must lie in [0, 1]"));
        }
        if !(self.depth_softness > 0.0) {
            return Err(Error::invalid("depth_softness must be positive"));
        }
        Ok(())
    }

    pub fn flux_scales(&self) -> Vec<f64> {
        self.species.iter().map(|s| s.flux_scale).collect()
    }

    /// Absorption depth of one species: zero for sinks and zero fluxes,
    /// otherwise `1 − exp(−asinh(flux/scale)/softness)`.
    pub fn depth(&self, species: usize, flux: f64) -> f64 {
        let scale = self.species[species].flux_scale;
        if flux <= 0.0 || scale <= 0.0 {
            return 0.0;
        }
        1.0 - (-(flux / scale).asinh() / self.depth_softness).exp()
    }
}
