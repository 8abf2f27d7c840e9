//! Run configuration: model kind, architecture and training
//! hyperparameters, evaluation knobs. Strictly parsed from JSON.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Cnn,
    Bcnn,
    Vit,
    Squat,
}

impl ModelKind {
    pub const ALL: [ModelKind; 4] = [ModelKind::Cnn, ModelKind::Bcnn, ModelKind::Vit, ModelKind::Squat];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Cnn => "cnn",
            ModelKind::Bcnn => "bcnn",
            ModelKind::Vit => "vit",
            ModelKind::Squat => "squat",
        }
    }

    /// Default number of Monte Carlo passes.
    pub fn default_passes(self) -> usize {
        match self {
            ModelKind::Bcnn => 50,
            _ => 30,
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ModelKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown model kind {s:?} (expected cnn, bcnn, vit or squat)")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CnnConfig {
    pub filters: Vec<usize>,
    pub kernels: Vec<usize>,
    pub fc: Vec<usize>,
    pub dropout: f64,
}

impl Default for CnnConfig {
    fn default() -> Self {
        Self { filters: vec![32, 64, 128, 256, 512], kernels: vec![13, 11, 9, 7, 5], fc: vec![256, 128], dropout: 0.5 }
    }
}

impl CnnConfig {
    pub fn validate(&self) -> Result<()> {
        if self.filters.is_empty() || self.filters.len() != self.kernels.len() {
            return Err(Error::invalid("cnn filters and kernels must be nonempty and of equal length"));
        }
        if self.kernels.iter().any(|k| k % 2 == 0) {
            return Err(Error::invalid(format!("cnn kernels must be odd, got {:?}", self.kernels)));
        }
        if self.filters.iter().chain(&self.fc).any(|&c| c == 0) {
            return Err(Error::invalid("cnn layer widths must be positive"));
        }
        check_dropout(self.dropout)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BcnnConfig {
    pub net: CnnConfig,
    /// Posterior standard deviation at initialization.
    pub init_sigma: f64,
}

impl Default for BcnnConfig {
    fn default() -> Self {
        Self { net: CnnConfig::default(), init_sigma: 1e-3 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderConfig {
    pub dim: usize,
    pub layers: usize,
    pub heads: usize,
    pub mlp_ratio: usize,
    pub dropout: f64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self { dim: 256, layers: 6, heads: 8, mlp_ratio: 4, dropout: 0.2 }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.heads == 0 || !self.dim.is_multiple_of(self.heads) {
            return Err(Error::invalid(format!(
                "embedding dimension {} must be a positive multiple of {} heads",
                self.dim, self.heads
            )));
        }
        if self.mlp_ratio == 0 {
            return Err(Error::invalid("mlp_ratio must be positive"));
        }
        check_dropout(self.dropout)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VitConfig {
    pub encoder: EncoderConfig,
    pub patch_size: usize,
}

impl Default for VitConfig {
    fn default() -> Self {
        Self { encoder: EncoderConfig::default(), patch_size: 10 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SquatConfig {
    pub encoder: EncoderConfig,
    pub patch_sizes: Vec<usize>,
    /// Output channels of each patch branch; `None` means the embedding
    /// dimension.
    pub branch_channels: Option<usize>,
    pub interaction_heads: usize,
    /// Prior band width as a multiple of the catalog half-width.
    pub prior_width_scale: f64,
    /// When false the prior mask is never mixed in.
    pub prior_enabled: bool,
}

impl Default for SquatConfig {
    fn default() -> Self {
        Self {
            encoder: EncoderConfig::default(),
            patch_sizes: vec![3, 5, 10],
            branch_channels: None,
            interaction_heads: 8,
            prior_width_scale: 1.0,
            prior_enabled: true,
        }
    }
}

impl SquatConfig {
    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        if self.patch_sizes.is_empty() || self.patch_sizes.contains(&0) {
            return Err(Error::invalid("squat patch sizes must be nonempty and positive"));
        }
        if self.branch_channels == Some(0) {
            return Err(Error::invalid("branch_channels must be positive"));
        }
        let d = self.encoder.dim;
        if self.interaction_heads == 0 || !d.is_multiple_of(self.interaction_heads) {
            return Err(Error::invalid(format!(
                "embedding dimension {d} must be a multiple of {} interaction heads",
                self.interaction_heads
            )));
        }
        if d < 2 {
            return Err(Error::invalid("squat embedding dimension must be at least 2"));
        }
        if !(self.prior_width_scale > 0.0) {
            return Err(Error::invalid("prior_width_scale must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossMode {
    /// Half squared error plus weighted KL; written as "eq1" in configs.
    #[serde(rename = "eq1", alias = "mse")]
    Mse,
    /// Heteroscedastic Gaussian NLL plus weighted KL.
    Nll,
}

impl FromStr for LossMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "eq1" | "mse" => Ok(LossMode::Mse),
            "nll" => Ok(LossMode::Nll),
            _ => Err(Error::invalid(format!("unknown loss mode {s:?} (expected eq1 or nll)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub plateau_patience: usize,
    pub lr_factor: f64,
    pub min_lr: f64,
    pub stop_patience: usize,
    /// KL weight; `None` means one over the training set size.
    #[serde(default)]
    pub kl_weight: Option<f64>,
    /// Leading epochs of an `nll` run that fit the mean with the squared
    /// error term only; model selection starts afterwards.
    #[serde(default)]
    pub warmup_epochs: usize,
    /// Exponent of the detached variance weight on each NLL term; zero is
    /// the plain Gaussian NLL.
    #[serde(default)]
    pub nll_beta: f64,
}

impl TrainConfig {
    /// Full-size per-architecture budgets.
    pub fn full(kind: ModelKind) -> Self {
        let (lr, batch_size, epochs) = match kind {
            ModelKind::Cnn => (1e-5, 128, 130),
            ModelKind::Bcnn => (1e-5, 128, 140),
            ModelKind::Vit => (1e-4, 64, 50),
            ModelKind::Squat => (1e-4, 64, 35),
        };
        Self {
            lr,
            batch_size,
            epochs,
            plateau_patience: 5,
            lr_factor: 0.5,
            min_lr: 1e-7,
            stop_patience: 10,
            kl_weight: None,
            warmup_epochs: 0,
            nll_beta: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) || self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::invalid("lr, batch_size and epochs must be positive"));
        }
        if !(self.lr_factor > 0.0 && self.lr_factor <= 1.0) || !(self.min_lr >= 0.0) {
            return Err(Error::invalid("lr_factor must lie in (0, 1] and min_lr must be >= 0"));
        }
        if self.kl_weight.is_some_and(|w| !(w >= 0.0)) {
            return Err(Error::invalid("kl_weight must be >= 0"));
        }
        if !(0.0..=1.0).contains(&self.nll_beta) {
            return Err(Error::invalid("nll_beta must lie in [0, 1]"));
        }
        if self.warmup_epochs >= self.epochs {
            return Err(Error::invalid("warmup_epochs must be below epochs"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MetricSpace {
    Transformed,
    Physical,
}

impl MetricSpace {
    pub fn name(self) -> &'static str {
        match self {
            MetricSpace::Transformed => "transformed",
            MetricSpace::Physical => "physical",
        }
    }
}

impl FromStr for MetricSpace {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "transformed" => Ok(MetricSpace::Transformed),
            "physical" => Ok(MetricSpace::Physical),
            _ => Err(Error::invalid(format!("unknown metric space {s:?} (expected transformed or physical)"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum IntervalMode {
    Gaussian,
    McQuantile,
}

impl FromStr for IntervalMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gaussian" => Ok(IntervalMode::Gaussian),
            "mc-quantile" => Ok(IntervalMode::McQuantile),
            _ => Err(Error::invalid(format!("unknown interval mode {s:?} (expected gaussian or mc-quantile)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub model: ModelKind,
    pub seed: u64,
    pub cnn: CnnConfig,
    pub bcnn: BcnnConfig,
    pub vit: VitConfig,
    pub squat: SquatConfig,
    /// Training hyperparameters; `None` resolves to the model's defaults.
    pub train: Option<TrainConfig>,
    pub loss_mode: LossMode,
    /// Monte Carlo passes; `None` resolves per model kind.
    pub mc_passes: Option<usize>,
    pub metric_space: MetricSpace,
    pub interval_mode: IntervalMode,
    pub data: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            model: ModelKind::Squat,
            seed: 42,
            cnn: CnnConfig::default(),
            bcnn: BcnnConfig::default(),
            vit: VitConfig::default(),
            squat: SquatConfig::default(),
            train: None,
            loss_mode: LossMode::Nll,
            mc_passes: None,
            metric_space: MetricSpace::Transformed,
            interval_mode: IntervalMode::Gaussian,
            data: None,
            out: None,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::invalid(format!("{}: invalid config: {e}", path.display())))
    }

    /// Small architectures and budgets that train on one CPU core in
    /// minutes.
    pub fn desk(model: ModelKind) -> Self {
        let encoder = EncoderConfig { dim: 32, layers: 1, heads: 2, mlp_ratio: 2, dropout: 0.1 };
        let net = CnnConfig {
            filters: vec![8, 16, 32, 32, 32],
            kernels: vec![13, 11, 9, 7, 5],
            fc: vec![128, 64],
            dropout: 0.1,
        };
        let (batch_size, epochs) = match model {
            ModelKind::Cnn | ModelKind::Bcnn => (32, 30),
            ModelKind::Vit => (8, 15),
            ModelKind::Squat => (8, 8),
        };
        let mut train = TrainConfig { lr: 2e-3, batch_size, epochs, ..TrainConfig::full(model) };
        if model == ModelKind::Bcnn {
            train.warmup_epochs = 10;
            train.nll_beta = 1.0;
        }
        Self {
            model,
            cnn: net.clone(),
            bcnn: BcnnConfig { net, ..BcnnConfig::default() },
            vit: VitConfig { encoder: encoder.clone(), patch_size: 10 },
            squat: SquatConfig {
                encoder,
                branch_channels: Some(16),
                interaction_heads: 2,
                ..SquatConfig::default()
            },
            train: Some(train),
            ..Self::default()
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        self.train.clone().unwrap_or_else(|| TrainConfig::full(self.model))
    }

    pub fn passes(&self) -> usize {
        self.mc_passes.unwrap_or_else(|| self.model.default_passes())
    }

    /// Fills every `None` that has a kind-dependent default.
    pub fn resolved(&self) -> Self {
        Self { train: Some(self.train_config()), mc_passes: Some(self.passes()), ..self.clone() }
    }

    pub fn validate(&self) -> Result<()> {
        match self.model {
            ModelKind::Cnn => self.cnn.validate()?,
            ModelKind::Bcnn => {
                self.bcnn.net.validate()?;
                if !(self.bcnn.init_sigma > 0.0) {
                    return Err(Error::invalid("bcnn init_sigma must be positive"));
                }
            }
            ModelKind::Vit => {
                self.vit.encoder.validate()?;
                if self.vit.patch_size == 0 {
                    return Err(Error::invalid("vit patch_size must be positive"));
                }
            }
            ModelKind::Squat => self.squat.validate()?,
        }
        self.train_config().validate()?;
        if self.mc_passes.is_some_and(|t| t < 2) {
            return Err(Error::invalid("mc_passes must be at least 2"));
        }
        Ok(())
    }
}

fn check_dropout(p: f64) -> Result<()> {
    if (0.0..1.0).contains(&p) {
        Ok(())
    } else {
        Err(Error::invalid(format!("dropout must lie in [0, 1), got {p}")))
    }
}
