//! Point metrics, error correlations, SNR sweeps and attention export.

use std::path::Path;

use autodiff::{Graph, Tensor};
use serde::Serialize;

use crate::config::MetricSpace;
use crate::error::{Error, Result};
use crate::models::checkpoint::Checkpoint;
use crate::models::layers::{Ctx, Mode};
use crate::models::train::{predict, Prepared};
use crate::models::Arch;
use crate::rng::{child, mix, Domain};
use crate::spectral::{apply_snr, Dataset, NormalizerState, Split, N_SPECIES, SPECIES};
use crate::stats::render;

pub use crate::stats::pearson;

pub const DEFAULT_SNRS: [f64; 6] = [5.0, 10.0, 20.0, 40.0, 50.0, 100.0];

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Scores {
    /// `None` when the truth is constant.
    pub r2: Option<f64>,
    pub rmse: f64,
    pub mae: f64,
}

fn scores(pred: &[f64], truth: &[f64]) -> Scores {
    let n = truth.len() as f64;
    let mean = truth.iter().sum::<f64>() / n;
    let ss_tot: f64 = truth.iter().map(|t| (t - mean).powi(2)).sum();
    let ss_res: f64 = pred.iter().zip(truth).map(|(p, t)| (p - t).powi(2)).sum();
    let mae = pred.iter().zip(truth).map(|(p, t)| (p - t).abs()).sum::<f64>() / n;
    Scores { r2: (ss_tot > 0.0).then(|| 1.0 - ss_res / ss_tot), rmse: (ss_res / n).sqrt(), mae }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricsReport {
    pub space: MetricSpace,
    pub n_samples: usize,
    pub species: Vec<Scores>,
    /// Over all species and samples pooled.
    pub aggregate: Scores,
    /// Unweighted mean of the defined per-species R² values.
    pub mean_species_r2: Option<f64>,
}

fn column(v: &[f64], s: usize) -> Vec<f64> {
    v.iter().skip(s).step_by(N_SPECIES).copied().collect()
}

/// Scores of row-major `[N, 8]` predictions. `space` only labels the report.
pub fn point_metrics(pred: &[f64], truth: &[f64], space: MetricSpace) -> Result<MetricsReport> {
    if pred.len() != truth.len() || !truth.len().is_multiple_of(N_SPECIES) {
        return Err(Error::invalid("predictions and truth must both be N x 8"));
    }
    let n = truth.len() / N_SPECIES;
    if n < 2 {
        return Err(Error::invalid("metrics need at least 2 samples"));
    }
    let species: Vec<Scores> = (0..N_SPECIES).map(|s| scores(&column(pred, s), &column(truth, s))).collect();
    let defined: Vec<f64> = species.iter().filter_map(|s| s.r2).collect();
    Ok(MetricsReport {
        space,
        n_samples: n,
        aggregate: scores(pred, truth),
        mean_species_r2: (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64),
        species,
    })
}

impl MetricsReport {
    /// One-line summary printed by `eval`.
    pub fn summary(&self) -> String {
        format!(
            "aggregate r2={} rmse={:.6} mae={:.6} space={} n={}",
            render(self.aggregate.r2),
            self.aggregate.rmse,
            self.aggregate.mae,
            self.space.name(),
            self.n_samples
        )
    }

    /// `species,r2,rmse,mae,space`, one row per species, then the pooled
    /// `all` row and the per-species mean.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["species", "r2", "rmse", "mae", "space"])?;
        let space = self.space.name();
        for (name, s) in SPECIES.iter().zip(&self.species) {
            w.write_record([name.to_string(), render(s.r2), s.rmse.to_string(), s.mae.to_string(), space.to_string()])?;
        }
        let a = &self.aggregate;
        w.write_record(["all", &render(a.r2), &a.rmse.to_string(), &a.mae.to_string(), space])?;
        let k = self.species.len() as f64;
        let rmse = self.species.iter().map(|s| s.rmse).sum::<f64>() / k;
        let mae = self.species.iter().map(|s| s.mae).sum::<f64>() / k;
        w.write_record(["species_mean", &render(self.mean_species_r2), &rmse.to_string(), &mae.to_string(), space])?;
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Pearson correlations between per-species error vectors. Entries
/// involving a species with constant error are `None`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ErrorCorrelation {
    pub r: [[Option<f64>; N_SPECIES]; N_SPECIES],
}

pub fn error_correlation(pred: &[f64], truth: &[f64]) -> Result<ErrorCorrelation> {
    if pred.len() != truth.len() || !truth.len().is_multiple_of(N_SPECIES) {
        return Err(Error::invalid("predictions and truth must both be N x 8"));
    }
    if truth.len() / N_SPECIES < 3 {
        return Err(Error::invalid("error correlation needs at least 3 samples"));
    }
    let err: Vec<f64> = pred.iter().zip(truth).map(|(p, t)| p - t).collect();
    let cols: Vec<Vec<f64>> = (0..N_SPECIES).map(|s| column(&err, s)).collect();
    let mut r = [[None; N_SPECIES]; N_SPECIES];
    for a in 0..N_SPECIES {
        let defined = pearson(&cols[a], &cols[a]).is_some();
        r[a][a] = defined.then_some(1.0);
        for b in a + 1..N_SPECIES {
            let v = if defined { pearson(&cols[a], &cols[b]) } else { None };
            r[a][b] = v;
            r[b][a] = v;
        }
    }
    Ok(ErrorCorrelation { r })
}

impl ErrorCorrelation {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(std::iter::once("species").chain(SPECIES))?;
        for (name, row) in SPECIES.iter().zip(&self.r) {
            w.write_record(std::iter::once(name.to_string()).chain(row.iter().map(|v| render(*v))))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// `[N, 8]` transformed targets mapped to `space`.
pub fn to_space(values: &[f64], norm: &NormalizerState, space: MetricSpace) -> Result<Vec<f64>> {
    match space {
        MetricSpace::Transformed => Ok(values.to_vec()),
        MetricSpace::Physical => {
            let mut out = Vec::with_capacity(values.len());
            for row in values.chunks(N_SPECIES) {
                out.extend(norm.inverse_fluxes(row)?);
            }
            Ok(out)
        }
    }
}

/// Deterministic predictions of a checkpoint and the matching truth, both
/// in `space`.
pub fn evaluate(ckpt: &Checkpoint, data: &Prepared, space: MetricSpace) -> Result<(Vec<f64>, Vec<f64>)> {
    let norm = &ckpt.manifest.normalizer;
    let pred = predict(&ckpt.model, data, 128)?;
    Ok((to_space(&pred, norm, space)?, to_space(&data.targets(), norm, space)?))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepRow {
    pub snr: f64,
    pub model: String,
    pub r2: Option<f64>,
    pub rmse: f64,
}

/// Test spectra of `ds` re-noised at `snr`; the noise of sample `id` comes
/// from a stream keyed by the seed, the SNR level and `id`.
pub fn renoised_test_set(ds: &Dataset, norm: &NormalizerState, snr: f64, seed: u64) -> Result<Prepared> {
    let ids = ds.indices(Split::Test);
    let key = mix(seed, snr.to_bits());
    let mut rows = Vec::with_capacity(ids.len());
    for &i in &ids {
        let clean = ds.clean_spectrum(i)?;
        let noisy = apply_snr(&clean, snr, &mut child(key, Domain::SweepNoise, i as u64))?;
        rows.push((noisy, ds.fluxes(i).to_vec()));
    }
    Prepared::from_rows(rows, norm, ids)
}

pub fn snr_sweep(ckpt: &Checkpoint, ds: &Dataset, snrs: &[f64], seed: u64, space: MetricSpace) -> Result<Vec<SweepRow>> {
    if !ckpt.manifest.trained {
        return Err(Error::invalid("snr sweep requires a trained checkpoint"));
    }
    if snrs.is_empty() {
        return Err(Error::invalid("snr list is empty"));
    }
    if ds.indices(Split::Test).len() < 2 {
        return Err(Error::invalid("dataset has fewer than 2 test samples"));
    }
    let mut rows = Vec::with_capacity(snrs.len());
    for &snr in snrs {
        let data = renoised_test_set(ds, &ckpt.manifest.normalizer, snr, seed)?;
        let (pred, truth) = evaluate(ckpt, &data, space)?;
        let agg = point_metrics(&pred, &truth, space)?.aggregate;
        rows.push(SweepRow { snr, model: ckpt.manifest.kind.name().to_string(), r2: agg.r2, rmse: agg.rmse });
    }
    Ok(rows)
}

pub fn write_sweep_csv(path: &Path, rows: &[SweepRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["snr", "model", "r2", "rmse"])?;
    for r in rows {
        w.write_record([r.snr.to_string(), r.model.clone(), render(r.r2), r.rmse.to_string()])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Cross-attention of one spectrum, heads averaged.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionExport {
    pub wavelengths: Vec<f64>,
    pub spectrum: Vec<f64>,
    /// `[8][T]` head-averaged attention before rescaling.
    pub raw: Vec<Vec<f64>>,
    /// Each row divided by its own maximum.
    pub normalized: Vec<Vec<f64>>,
}

/// Attention of a SQuAT checkpoint on a raw (unnormalized) spectrum.
pub fn export_attention(ckpt: &Checkpoint, spectrum: &[f64]) -> Result<AttentionExport> {
    if !matches!(ckpt.model.arch, Arch::Squat(_)) {
        return Err(Error::invalid("attention export requires a squat checkpoint"));
    }
    let grid = ckpt.grid()?;
    let x = ckpt.manifest.normalizer.apply(spectrum)?;
    let g = Graph::<f32>::inference();
    let cx = Ctx::bind(&g, &ckpt.model.params, Mode::DETERMINISTIC, child(0, Domain::Probe, 0), false);
    let input = Tensor::new([1, 1, x.len()], x.iter().map(|&v| v as f32).collect())?;
    let out = ckpt.model.forward(&cx, g.constant(input))?;
    let attn = g.value(out.attention.ok_or_else(|| Error::invalid("model returned no attention"))?);
    let &[_, heads, k, t] = attn.shape() else {
        return Err(Error::invalid("unexpected attention shape"));
    };
    let data = attn.data();
    let raw: Vec<Vec<f64>> = (0..k)
        .map(|s| {
            (0..t)
                .map(|j| (0..heads).map(|h| data[(h * k + s) * t + j] as f64).sum::<f64>() / heads as f64)
                .collect()
        })
        .collect();
    let normalized = raw
        .iter()
        .map(|row| {
            let max = row.iter().copied().fold(0.0, f64::max);
            if max > 0.0 { row.iter().map(|v| v / max).collect() } else { row.clone() }
        })
        .collect();
    Ok(AttentionExport { wavelengths: grid.points().to_vec(), spectrum: spectrum.to_vec(), raw, normalized })
}

impl AttentionExport {
    /// `wavelength_um,spectrum,O2,...,SO2` with the normalized rows.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["wavelength_um", "spectrum"].into_iter().chain(SPECIES))?;
        for (j, (lam, v)) in self.wavelengths.iter().zip(&self.spectrum).enumerate() {
            let rec = [lam.to_string(), v.to_string()]
                .into_iter()
                .chain(self.normalized.iter().map(|row| row[j].to_string()));
            w.write_record(rec)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Fraction of `row`'s mass on tokens within `widths` half-widths of any of
/// the bands, and the fraction of tokens those windows cover.
pub fn band_window_mass(row: &[f64], wavelengths: &[f64], bands: &[crate::spectral::Band], widths: f64) -> (f64, f64) {
    let inside: Vec<bool> = wavelengths
        .iter()
        .map(|&l| bands.iter().any(|b| (l - b.center_um).abs() <= widths * b.half_width_um))
        .collect();
    let total: f64 = row.iter().sum();
    let mass: f64 = row.iter().zip(&inside).filter(|(_, &i)| i).map(|(v, _)| v).sum();
    let covered = inside.iter().filter(|&&i| i).count() as f64 / wavelengths.len() as f64;
    (if total > 0.0 { mass / total } else { 0.0 }, covered)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_species(truth: &[f64], pred: &[f64]) -> (Vec<f64>, Vec<f64>) {
        // the same column repeated for every species
        let t = truth.iter().flat_map(|&v| [v; N_SPECIES]).collect();
        let p = pred.iter().flat_map(|&v| [v; N_SPECIES]).collect();
        (p, t)
    }

    #[test]
    fn hand_metrics() {
        let (p, t) = one_species(&[0.0, 2.0], &[1.0, 1.0]);
        let r = point_metrics(&p, &t, MetricSpace::Transformed).unwrap();
        assert_eq!(r.species[0], Scores { r2: Some(0.0), rmse: 1.0, mae: 1.0 });
        assert_eq!(r.aggregate, r.species[0]);
    }

    #[test]
    fn perfect_and_constant_truth() {
        let (p, t) = one_species(&[0.5, 1.5, 3.0], &[0.5, 1.5, 3.0]);
        let r = point_metrics(&p, &t, MetricSpace::Physical).unwrap();
        assert_eq!(r.aggregate, Scores { r2: Some(1.0), rmse: 0.0, mae: 0.0 });
        let (p, t) = one_species(&[1.0, 1.0], &[0.0, 2.0]);
        let r = point_metrics(&p, &t, MetricSpace::Transformed).unwrap();
        assert_eq!(r.species[3].r2, None);
        assert_eq!(r.mean_species_r2, None);
    }

    #[test]
    fn correlation_of_identical_and_opposite_errors() {
        let n = 5;
        let mut pred = vec![0.0; n * N_SPECIES];
        let truth = vec![0.0; n * N_SPECIES];
        for i in 0..n {
            for s in 0..N_SPECIES {
                let e = (i as f64 + 1.0) * (s as f64 + 1.0);
                pred[i * N_SPECIES + s] = if s == 1 { -e } else { e + (i * i) as f64 * (s % 3) as f64 };
            }
        }
        let c = error_correlation(&pred, &truth).unwrap();
        assert_eq!(c.r[0][0], Some(1.0));
        assert!((c.r[0][1].unwrap() + 1.0).abs() < 1e-12);
        assert!((c.r[0][3].unwrap() - 1.0).abs() < 1e-12);
        for a in 0..N_SPECIES {
            for b in 0..N_SPECIES {
                assert_eq!(c.r[a][b], c.r[b][a]);
            }
        }
    }

    #[test]
    fn constant_error_is_undefined() {
        let truth: Vec<f64> = (0..4 * N_SPECIES).map(|i| i as f64 * 0.37).collect();
        let mut pred = truth.clone();
        for i in 0..4 {
            pred[i * N_SPECIES + 2] += 1.0;
            pred[i * N_SPECIES + 5] += i as f64;
        }
        let c = error_correlation(&pred, &truth).unwrap();
        assert_eq!(c.r[2][2], None);
        assert_eq!(c.r[2][5], None);
        assert_eq!(c.r[5][5], Some(1.0));
    }

    #[test]
    fn window_mass() {
        let wl = [1.0, 2.0, 3.0, 4.0];
        let band = crate::spectral::Band::new(2.0, 0.5, 1.0);
        let (mass, covered) = band_window_mass(&[1.0, 2.0, 1.0, 0.0], &wl, &[band], 2.0);
        assert_eq!(mass, 1.0);
        assert_eq!(covered, 0.75);
    }
}
