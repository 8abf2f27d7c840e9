//! The four flux regressors, their losses, training loop and checkpoint
//! container.

pub mod checkpoint;
pub mod cnn;
pub mod layers;
pub mod loss;
pub mod params;
pub mod squat;
pub mod train;
pub mod vit;

use autodiff::{Graph, Real, Var};

pub use cnn::{Bcnn, Cnn};
pub use layers::{Ctx, Mode};
pub use params::ParamStore;
pub use squat::{mix_prior, prior_mix, PriorMask, Squat};
pub use vit::Vit;

use crate::config::{ModelKind, RunConfig};
use crate::error::{Error, Result};
use crate::rng::{child, Domain};
use crate::spectral::{SpeciesCatalog, WavelengthGrid};

/// Half-width of the uniform initialization of embeddings.
pub(crate) const EMBED_INIT: f64 = 0.02;

/// Result of one forward pass.
#[derive(Clone, Copy, Debug)]
pub struct ModelOutput {
    /// `[B, 8]` predictions in transformed flux units.
    pub mean: Var,
    /// `[B, 8]` log-variances from a heteroscedastic head.
    pub log_var: Option<Var>,
    /// `[B, h, 8, T]` species cross-attention.
    pub attention: Option<Var>,
}

/// Checks `x` is `[B, 1, len]` and returns `B`.
pub(crate) fn check_input<T: Real>(g: &Graph<T>, x: Var, len: usize) -> Result<usize> {
    let s = g.shape(x);
    if s.len() != 3 || s[1] != 1 || s[2] != len || s[0] == 0 {
        return Err(Error::invalid(format!("expected input [B, 1, {len}], got {s:?}")));
    }
    Ok(s[0])
}

#[derive(Clone, Debug, PartialEq)]
pub enum Arch {
    Cnn(Cnn),
    Bcnn(Bcnn),
    Vit(Vit),
    Squat(Squat),
}

/// Architecture plus parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Model<T: Real> {
    pub arch: Arch,
    pub params: ParamStore<T>,
}

impl<T: Real> Model<T> {
    /// Builds `cfg.model` with parameters drawn from the seed's init stream.
    pub fn build(cfg: &RunConfig, grid: &WavelengthGrid, catalog: &SpeciesCatalog, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = child(seed, Domain::Init, 0);
        let mut ps = ParamStore::new();
        let len = grid.len();
        let arch = match cfg.model {
            ModelKind::Cnn => Arch::Cnn(Cnn::build(&cfg.cnn, len, &mut ps, &mut rng)?),
            ModelKind::Bcnn => Arch::Bcnn(Bcnn::build(&cfg.bcnn, len, &mut ps, &mut rng)?),
            ModelKind::Vit => Arch::Vit(Vit::build(&cfg.vit, len, &mut ps, &mut rng)?),
            ModelKind::Squat => Arch::Squat(Squat::build(&cfg.squat, catalog, grid.points(), &mut ps, &mut rng)?),
        };
        Ok(Self { arch, params: ps })
    }

    pub fn kind(&self) -> ModelKind {
        match self.arch {
            Arch::Cnn(_) => ModelKind::Cnn,
            Arch::Bcnn(_) => ModelKind::Bcnn,
            Arch::Vit(_) => ModelKind::Vit,
            Arch::Squat(_) => ModelKind::Squat,
        }
    }

    pub fn input_len(&self) -> usize {
        match &self.arch {
            Arch::Cnn(m) => m.input_len,
            Arch::Bcnn(m) => m.input_len,
            Arch::Vit(m) => m.input_len,
            Arch::Squat(m) => m.input_len,
        }
    }

    pub fn forward(&self, cx: &Ctx<'_, T>, x: Var) -> Result<ModelOutput> {
        match &self.arch {
            Arch::Cnn(m) => m.forward(cx, x),
            Arch::Bcnn(m) => m.forward(cx, x),
            Arch::Vit(m) => m.forward(cx, x),
            Arch::Squat(m) => m.forward(cx, x),
        }
    }

    /// Summed posterior KL for variational models.
    pub fn kl(&self, cx: &Ctx<'_, T>) -> Result<Option<Var>> {
        match &self.arch {
            Arch::Bcnn(m) => m.kl(cx).map(Some),
            _ => Ok(None),
        }
    }

    /// Stochastic components active while training.
    pub fn training_mode(&self) -> Mode {
        Mode { dropout: true, sample_weights: matches!(self.arch, Arch::Bcnn(_)) }
    }

    /// Stochastic components used for Monte Carlo prediction: weight
    /// sampling for the Bayesian CNN, active dropout otherwise.
    pub fn mc_mode(&self) -> Mode {
        match self.arch {
            Arch::Bcnn(_) => Mode { dropout: false, sample_weights: true },
            _ => Mode { dropout: true, sample_weights: false },
        }
    }

    pub fn cast<U: Real>(&self) -> Model<U> {
        Model { arch: self.arch.clone(), params: self.params.cast() }
    }
}
