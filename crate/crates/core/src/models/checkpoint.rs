use std::path::Path;

use autodiff::Tensor;
use serde::{Deserialize, Serialize};

use crate::config::{ModelKind, RunConfig};
use crate::error::{Error, Result};
use crate::models::train::History;
use crate::models::Model;
use crate::spectral::{GridParams, NormalizerState, SpeciesCatalog, WavelengthGrid};

pub const MAGIC: &[u8; 8] = b"SQATCKPT";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamRecord {
    pub name: String,
    pub shape: Vec<usize>,
    /// Byte offset into the blob section.
    pub offset: usize,
    /// Number of f32 values.
    pub length: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub kind: ModelKind,
    pub config: RunConfig,
    pub seed: u64,
    pub trained: bool,
    pub dataset_fingerprint: Option<String>,
    pub history: Option<History>,
    pub normalizer: NormalizerState,
    pub grid: GridParams,
    pub catalog: SpeciesCatalog,
    pub params: Vec<ParamRecord>,
}

/// A model with everything needed to evaluate it on new spectra.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub manifest: Manifest,
    pub model: Model<f32>,
}

impl Checkpoint {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        model: Model<f32>,
        config: &RunConfig,
        seed: u64,
        normalizer: NormalizerState,
        grid: GridParams,
        catalog: SpeciesCatalog,
        dataset_fingerprint: Option<String>,
        history: Option<History>,
    ) -> Self {
        let mut offset = 0;
        let params = model
            .params
            .names()
            .iter()
            .zip(model.params.tensors())
            .map(|(name, t)| {
                let rec = ParamRecord { name: name.clone(), shape: t.shape().to_vec(), offset, length: t.numel() };
                offset += t.numel() * 4;
                rec
            })
            .collect();
        let manifest = Manifest {
            kind: model.kind(),
            config: config.resolved(),
            seed,
            trained: history.is_some(),
            dataset_fingerprint,
            history,
            normalizer,
            grid,
            catalog,
            params,
        };
        Self { manifest, model }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let json = serde_json::to_vec(&self.manifest)?;
        let mut out = Vec::with_capacity(20 + json.len() + self.model.params.count() * 4);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for t in self.model.params.tensors() {
            t.data().iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes()));
        }
        Ok(out)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|e| match e {
            Error::Invalid(reason) => Error::format(path, reason),
            other => other,
        })
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |reason: String| Error::Invalid(reason);
        if bytes.len() < 20 || &bytes[..8] != MAGIC {
            return Err(bad("not a checkpoint (expected magic \"SQATCKPT\")".into()));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != VERSION {
            return Err(bad(format!("unsupported checkpoint version {version} (expected {VERSION})")));
        }
        let len = u64::from_le_bytes(bytes[12..20].try_into().unwrap());
        let end = usize::try_from(len)
            .ok()
            .and_then(|l| l.checked_add(20))
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| bad("truncated manifest".into()))?;
        let manifest: Manifest =
            serde_json::from_slice(&bytes[20..end]).map_err(|e| bad(format!("invalid manifest: {e}")))?;
        let blobs = &bytes[end..];
        let grid = WavelengthGrid::build(manifest.grid)?;
        let mut model = Model::<f32>::build(&manifest.config, &grid, &manifest.catalog, manifest.seed)?;
        if model.kind() != manifest.kind || model.params.len() != manifest.params.len() {
            return Err(bad("manifest parameters do not match the configured architecture".into()));
        }
        let mut tensors = Vec::with_capacity(manifest.params.len());
        let mut expected_offset = 0;
        for (rec, name) in manifest.params.iter().zip(model.params.names()) {
            if &rec.name != name || rec.offset != expected_offset || rec.shape.iter().product::<usize>() != rec.length {
                return Err(bad(format!("parameter record {} is inconsistent", rec.name)));
            }
            let raw = blobs
                .get(rec.offset..rec.offset + rec.length * 4)
                .ok_or_else(|| bad(format!("parameter {} is truncated", rec.name)))?;
            let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
            tensors.push(Tensor::new(rec.shape.clone(), data)?);
            expected_offset += rec.length * 4;
        }
        if expected_offset != blobs.len() {
            return Err(bad("trailing bytes after parameter blobs".into()));
        }
        if !model.params.replace_all(tensors) {
            return Err(bad("parameter shapes do not match the configured architecture".into()));
        }
        Ok(Self { manifest, model })
    }

    pub fn grid(&self) -> Result<WavelengthGrid> {
        WavelengthGrid::build(self.manifest.grid)
    }
}
