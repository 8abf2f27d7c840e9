use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::rng::{child, Domain};
use crate::spectral::catalog::{SpeciesCatalog, N_SPECIES};
use crate::spectral::forward::{apply_snr, forward_model, sample_flux_vector};
use crate::spectral::grid::{GridParams, WavelengthGrid};

pub const MAGIC: &[u8; 8] = b"SPECDS01";
pub const VERSION: u32 = 1;
pub const MIN_SAMPLES: usize = 10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Split::ALL.get(code as usize).copied()
    }
}

/// Everything needed to regenerate a dataset, plus its split counts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetMeta {
    pub grid: GridParams,
    pub catalog: SpeciesCatalog,
    pub seed: u64,
    pub snr_range: [f64; 2],
    /// train:val:test weights of the block assignment.
    pub split_ratio: [u32; 3],
    pub split_counts: [usize; 3],
}

#[cfg(test)]
impl DatasetMeta {
    pub(crate) fn for_tests() -> Self {
        Self {
            grid: GridParams::default(),
            catalog: SpeciesCatalog::default(),
            seed: 0,
            snr_range: [5.0, 100.0],
            split_ratio: [3, 1, 1],
            split_counts: [0; 3],
        }
    }
}

/// Generation request.
#[derive(Clone, Debug, Serialize)]
pub struct GenerateParams {
    pub n: usize,
    pub seed: u64,
    pub snr_range: [f64; 2],
    pub split_ratio: [u32; 3],
    pub grid: GridParams,
    pub catalog: SpeciesCatalog,
}

impl Default for GenerateParams {
    fn default() -> Self {
        Self {
            n: 1000,
            seed: 42,
            snr_range: [5.0, 100.0],
            split_ratio: [3, 1, 1],
            grid: GridParams::default(),
            catalog: SpeciesCatalog::default(),
        }
    }
}

/// Split of `sample_id`: ids are grouped in blocks of `sum(ratio)` and each
/// block receives a seed-dependent shuffle of the ratio's label multiset,
/// so every full block contributes exactly the ratio.
pub fn split_of(sample_id: u64, seed: u64, ratio: [u32; 3]) -> Split {
    let block_len: u32 = ratio.iter().sum();
    let block = sample_id / block_len as u64;
    let mut labels: Vec<Split> =
        Split::ALL.iter().zip(ratio).flat_map(|(&s, r)| std::iter::repeat_n(s, r as usize)).collect();
    labels.shuffle(&mut child(seed, Domain::Split, block));
    labels[(sample_id % block_len as u64) as usize]
}

/// In-memory dataset: noisy spectra (f32), signed fluxes, SNR tags, splits.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    meta: DatasetMeta,
    n_wavelengths: usize,
    spectra: Vec<f32>,
    fluxes: Vec<f64>,
    snr: Vec<f32>,
    split: Vec<Split>,
}

impl Dataset {
    pub fn generate(p: &GenerateParams) -> Result<Self> {
        if p.n < MIN_SAMPLES {
            return Err(Error::invalid(format!("need at least {MIN_SAMPLES} samples, got {}", p.n)));
        }
        let [lo, hi] = p.snr_range;
        if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
            return Err(Error::invalid(format!("snr range must satisfy 0 < min <= max, got [{lo}, {hi}]")));
        }
        if p.split_ratio.contains(&0) {
            return Err(Error::invalid(format!("split ratio entries must be positive, got {:?}", p.split_ratio)));
        }
        let grid = WavelengthGrid::build(p.grid)?;
        p.catalog.validate(&p.grid)?;
        let w = grid.len();
        let mut spectra = Vec::with_capacity(p.n * w);
        let mut fluxes = Vec::with_capacity(p.n * N_SPECIES);
        let mut snrs = Vec::with_capacity(p.n);
        let mut split = Vec::with_capacity(p.n);
        for id in 0..p.n as u64 {
            let mut rng = child(p.seed, Domain::Sample, id);
            let f = sample_flux_vector(&mut rng, &p.catalog);
            let u: f64 = if hi > lo { rng.random_range(lo.ln()..hi.ln()) } else { lo.ln() };
            let snr = u.exp().clamp(lo, hi);
            let clean = forward_model(&f, &grid, &p.catalog)?;
            let noisy = apply_snr(&clean, snr, &mut rng)?;
            spectra.extend(noisy.iter().map(|&v| v as f32));
            fluxes.extend_from_slice(&f);
            snrs.push(snr as f32);
            split.push(split_of(id, p.seed, p.split_ratio));
        }
        let meta = DatasetMeta {
            grid: p.grid,
            catalog: p.catalog.clone(),
            seed: p.seed,
            snr_range: p.snr_range,
            split_ratio: p.split_ratio,
            split_counts: [0; 3],
        };
        Self::from_parts(meta, w, spectra, fluxes, snrs, split)
    }

    /// Assembles a dataset from raw columns; split counts in `meta` are
    /// recomputed.
    pub fn from_parts(
        mut meta: DatasetMeta,
        n_wavelengths: usize,
        spectra: Vec<f32>,
        fluxes: Vec<f64>,
        snr: Vec<f32>,
        split: Vec<Split>,
    ) -> Result<Self> {
        let n = split.len();
        if spectra.len() != n * n_wavelengths || fluxes.len() != n * N_SPECIES || snr.len() != n {
            return Err(Error::invalid(format!(
                "column lengths disagree: {} spectra values, {} fluxes, {} snr for {n} samples of {n_wavelengths} points",
                spectra.len(),
                fluxes.len(),
                snr.len()
            )));
        }
        if spectra.iter().any(|v| !v.is_finite()) || fluxes.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("dataset contains non-finite values"));
        }
        meta.split_counts = [0; 3];
        for s in &split {
            meta.split_counts[s.code() as usize] += 1;
        }
        Ok(Self { meta, n_wavelengths, spectra, fluxes, snr, split })
    }

    pub fn meta(&self) -> &DatasetMeta {
        &self.meta
    }

    pub fn len(&self) -> usize {
        self.split.len()
    }

    pub fn is_empty(&self) -> bool {
        self.split.is_empty()
    }

    pub fn n_wavelengths(&self) -> usize {
        self.n_wavelengths
    }

    pub fn grid(&self) -> Result<WavelengthGrid> {
        WavelengthGrid::build(self.meta.grid)
    }

    pub fn spectrum(&self, i: usize) -> &[f32] {
        &self.spectra[i * self.n_wavelengths..(i + 1) * self.n_wavelengths]
    }

    #[cfg(test)]
    pub(crate) fn spectrum_mut(&mut self, i: usize) -> &mut [f32] {
        &mut self.spectra[i * self.n_wavelengths..(i + 1) * self.n_wavelengths]
    }

    /// Noise-free spectrum of sample `i`, regenerated from its fluxes.
    pub fn clean_spectrum(&self, i: usize) -> Result<Vec<f64>> {
        forward_model(self.fluxes(i), &self.grid()?, &self.meta.catalog)
    }

    pub fn fluxes(&self, i: usize) -> &[f64] {
        &self.fluxes[i * N_SPECIES..(i + 1) * N_SPECIES]
    }

    pub fn snr(&self, i: usize) -> f32 {
        self.snr[i]
    }

    pub fn split(&self, i: usize) -> Split {
        self.split[i]
    }

    pub fn indices(&self, split: Split) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.split[i] == split).collect()
    }

    /// The only handle from which a normalizer can be fitted.
    pub fn train(&self) -> TrainPartition<'_> {
        TrainPartition { dataset: self, indices: self.indices(Split::Train) }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let json = serde_json::to_vec(&self.meta)?;
        let n = self.len();
        let mut out = Vec::with_capacity(40 + json.len() + self.spectra.len() * 4 + self.fluxes.len() * 8 + n * 5);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(n as u64).to_le_bytes());
        out.extend_from_slice(&(self.n_wavelengths as u32).to_le_bytes());
        out.extend_from_slice(&(N_SPECIES as u32).to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        self.spectra.iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes()));
        self.fluxes.iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes()));
        self.snr.iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes()));
        out.extend(self.split.iter().map(|s| s.code()));
        Ok(out)
    }

    /// Writes the file and returns its fingerprint.
    pub fn write(&self, path: &Path) -> Result<String> {
        let bytes = self.to_bytes()?;
        std::fs::write(path, &bytes).map_err(|e| Error::io(path, e))?;
        Ok(fingerprint(&bytes))
    }

    /// Reads a dataset file, returning it with its fingerprint.
    pub fn read(path: &Path) -> Result<(Self, String)> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let ds = Self::from_bytes(&bytes).map_err(|reason| Error::format(path, reason))?;
        Ok((ds, fingerprint(&bytes)))
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, String> {
        let mut r = Reader { bytes, pos: 0 };
        if bytes.get(..8) != Some(&MAGIC[..]) {
            return Err(format!("not a dataset file (expected magic {:?})", std::str::from_utf8(MAGIC).unwrap()));
        }
        r.take(8)?;
        let version = r.u32()?;
        if version != VERSION {
            return Err(format!("unsupported dataset version {version} (expected {VERSION})"));
        }
        let n = usize::try_from(r.u64()?).map_err(|_| "sample count overflows".to_string())?;
        let w = r.u32()? as usize;
        let s = r.u32()? as usize;
        if s != N_SPECIES {
            return Err(format!("file has {s} species, expected {N_SPECIES}"));
        }
        let json_len = usize::try_from(r.u64()?).map_err(|_| "metadata length overflows".to_string())?;
        let meta: DatasetMeta =
            serde_json::from_slice(r.take(json_len)?).map_err(|e| format!("invalid metadata: {e}"))?;
        let expected = n
            .checked_mul(w * 4 + s * 8 + 4 + 1)
            .ok_or_else(|| "declared sizes overflow".to_string())?;
        if r.remaining() != expected {
            return Err(format!("payload is {} bytes, header implies {expected}", r.remaining()));
        }
        let spectra = r.take(n * w * 4)?.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
        let fluxes = r.take(n * s * 8)?.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        let snr = r.take(n * 4)?.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
        let split = r
            .take(n)?
            .iter()
            .map(|&c| Split::from_code(c).ok_or_else(|| format!("invalid split code {c}")))
            .collect::<Result<Vec<_>, _>>()?;
        let stored_counts = meta.split_counts;
        let ds = Self::from_parts(meta, w, spectra, fluxes, snr, split).map_err(|e| e.to_string())?;
        if ds.meta.split_counts != stored_counts {
            return Err("split counts in metadata disagree with split codes".into());
        }
        Ok(ds)
    }
}

pub fn fingerprint(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], String> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or("truncated file")?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, String> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }
}

/// Training rows of a dataset.
pub struct TrainPartition<'a> {
    dataset: &'a Dataset,
    indices: Vec<usize>,
}

impl<'a> TrainPartition<'a> {
    pub fn dataset(&self) -> &'a Dataset {
        self.dataset
    }

    pub fn indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.indices.iter().copied()
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}
