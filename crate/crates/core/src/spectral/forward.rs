use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::spectral::catalog::{SpeciesCatalog, N_SPECIES};
use crate::spectral::grid::WavelengthGrid;

/// SNR at or above which no noise is injected.
pub const NOISELESS_SNR: f64 = 1e9;

/// Draws `sign · flux_scale · exp(u)` per species.
pub fn sample_flux_vector<R: Rng + ?Sized>(rng: &mut R, catalog: &SpeciesCatalog) -> [f64; N_SPECIES] {
    let [lo, hi] = catalog.sampling.log_range;
    let mut out = [0.0; N_SPECIES];
    for (o, s) in out.iter_mut().zip(&catalog.species) {
        let u = if hi > lo { rng.random_range(lo..hi) } else { lo };
        let sink = rng.random::<f64>() < catalog.sampling.sink_probability;
        let magnitude = s.flux_scale * u.exp();
        *o = if sink { -magnitude } else { magnitude };
    }
    out
}

/// Noise-free spectrum: continuum attenuated by every species' bands.
pub fn forward_model(fluxes: &[f64], grid: &WavelengthGrid, catalog: &SpeciesCatalog) -> Result<Vec<f64>> {
    if fluxes.len() != N_SPECIES || fluxes.iter().any(|f| !f.is_finite()) {
        return Err(Error::invalid(format!("expected {N_SPECIES} finite fluxes, got {fluxes:?}")));
    }
    let depths: Vec<f64> = fluxes.iter().enumerate().map(|(s, &f)| catalog.depth(s, f)).collect();
    Ok(grid
        .points()
        .iter()
        .map(|&lambda| {
            let optical_depth: f64 = catalog
                .species
                .iter()
                .zip(&depths)
                .filter(|(_, &d)| d > 0.0)
                .map(|(s, &d)| d * s.bands.iter().map(|b| b.strength * b.profile(lambda)).sum::<f64>())
                .sum();
            catalog.continuum.at(lambda) * (-optical_depth).exp()
        })
        .collect())
}

/// Adds i.i.d. Gaussian noise with `σ = mean(spectrum) / snr`.
pub fn apply_snr<R: Rng + ?Sized>(spectrum: &[f64], snr: f64, rng: &mut R) -> Result<Vec<f64>> {
    if !(snr > 0.0) {
        return Err(Error::invalid(format!("snr must be positive, got {snr}")));
    }
    if snr >= NOISELESS_SNR || spectrum.is_empty() {
        return Ok(spectrum.to_vec());
    }
    let sigma = spectrum.iter().sum::<f64>() / spectrum.len() as f64 / snr;
    Ok(spectrum
        .iter()
        .map(|&v| {
            let e: f64 = StandardNormal.sample(rng);
            v + sigma * e
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{child, Domain};
    use crate::spectral::catalog::Band;
    use crate::spectral::grid::GridParams;

    fn grid() -> WavelengthGrid {
        WavelengthGrid::build(GridParams::default()).unwrap()
    }

    #[test]
    fn no_sinks_means_positive_fluxes() {
        let mut c = SpeciesCatalog::default();
        c.sampling.sink_probability = 0.0;
        let mut rng = child(1, Domain::Probe, 0);
        for _ in 0..100 {
            assert!(sample_flux_vector(&mut rng, &c).iter().all(|&f| f > 0.0));
        }
    }

    #[test]
    fn zero_scales_give_zero_fluxes() {
        let mut c = SpeciesCatalog::default();
        c.species.iter_mut().for_each(|s| s.flux_scale = 0.0);
        let mut rng = child(1, Domain::Probe, 1);
        assert!(sample_flux_vector(&mut rng, &c).iter().all(|&f| f == 0.0));
    }

    #[test]
    fn sink_fraction_matches_probability() {
        let mut c = SpeciesCatalog::default();
        c.sampling.sink_probability = 0.3;
        let mut rng = child(7, Domain::Probe, 2);
        let mut negatives = [0usize; N_SPECIES];
        let draws = 100_000;
        for _ in 0..draws {
            for (n, f) in negatives.iter_mut().zip(sample_flux_vector(&mut rng, &c)) {
                *n += (f < 0.0) as usize;
            }
        }
        for n in negatives {
            let frac = n as f64 / draws as f64;
            assert!((frac - 0.3).abs() < 0.01, "{frac}");
        }
    }

    #[test]
    fn zero_flux_gives_continuum() {
        let c = SpeciesCatalog::default();
        let g = grid();
        let s = forward_model(&[0.0; 8], &g, &c).unwrap();
        for (v, &l) in s.iter().zip(g.points()) {
            assert_eq!(*v, c.continuum.at(l));
        }
    }

    #[test]
    fn absorption_is_monotone_in_flux() {
        let c = SpeciesCatalog::default();
        let g = grid();
        for s in 0..N_SPECIES {
            let mut f = [0.0; 8];
            f[s] = 3.0 * c.species[s].flux_scale;
            let a = forward_model(&f, &g, &c).unwrap();
            f[s] *= 2.0;
            let b = forward_model(&f, &g, &c).unwrap();
            assert!(a.iter().zip(&b).all(|(x, y)| y <= x));
        }
    }

    #[test]
    fn single_band_minimum_at_nearest_grid_point() {
        let mut c = SpeciesCatalog::default();
        for s in &mut c.species {
            s.bands.clear();
        }
        c.species[0].bands.push(Band::new(0.76, 0.006, 0.9));
        let g = grid();
        let s = forward_model(&[1e12, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0], &g, &c).unwrap();
        let ratio: Vec<f64> = s.iter().zip(g.points()).map(|(v, &l)| v / c.continuum.at(l)).collect();
        let argmin = (0..ratio.len()).min_by(|&a, &b| ratio[a].total_cmp(&ratio[b])).unwrap();
        let nearest = (0..g.len())
            .min_by(|&a, &b| (g.points()[a] - 0.76).abs().total_cmp(&(g.points()[b] - 0.76).abs()))
            .unwrap();
        assert_eq!(argmin, nearest);
    }

    #[test]
    fn sinks_add_no_absorption() {
        let c = SpeciesCatalog::default();
        let g = grid();
        let base = forward_model(&[0.0; 8], &g, &c).unwrap();
        let sinks = forward_model(&c.flux_scales().iter().map(|s| -5.0 * s).collect::<Vec<_>>(), &g, &c).unwrap();
        assert_eq!(base, sinks);
    }

    #[test]
    fn snr_noise_level_and_determinism() {
        let flat = vec![1.0; 1_000_000];
        let noisy = apply_snr(&flat, 10.0, &mut child(3, Domain::Probe, 0)).unwrap();
        let n = flat.len() as f64;
        let diffs: Vec<f64> = noisy.iter().map(|v| v - 1.0).collect();
        let mean = diffs.iter().sum::<f64>() / n;
        let std = (diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        assert!((std - 0.1).abs() < 1e-3, "{std}");
        let again = apply_snr(&flat, 10.0, &mut child(3, Domain::Probe, 0)).unwrap();
        assert_eq!(noisy, again);
    }

    #[test]
    fn huge_snr_is_noiseless_and_bad_snr_rejected() {
        let s = vec![0.3, 0.5, 0.7];
        let mut rng = child(3, Domain::Probe, 1);
        assert_eq!(apply_snr(&s, 1e9, &mut rng).unwrap(), s);
        assert!(apply_snr(&s, 0.0, &mut rng).is_err());
        assert!(apply_snr(&s, -1.0, &mut rng).is_err());
    }
}
