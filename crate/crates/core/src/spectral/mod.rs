//! Synthetic spectra: wavelength grid, species catalog, forward model,
//! noise, normalization and the dataset file.

pub mod catalog;
pub mod dataset;
pub mod forward;
pub mod grid;
pub mod normalize;

pub use catalog::{Band, SpeciesCatalog, N_SPECIES, SPECIES};
pub use dataset::{Dataset, DatasetMeta, GenerateParams, Split, TrainPartition};
pub use forward::{apply_snr, forward_model, sample_flux_vector};
pub use grid::{GridParams, WavelengthGrid};
pub use normalize::{asinh_transform, inverse_asinh_transform, percentile, NormalizerState};
