#![allow(clippy::neg_cmp_op_on_partial_ord)]
//! Biosignature flux regression from reflected-light spectra.

pub mod config;
mod error;
pub mod evaluation;
pub mod models;
pub mod rng;
pub mod spectral;
mod stats;
pub mod uncertainty;

pub use error::{Error, Result};
