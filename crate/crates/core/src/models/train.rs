use autodiff::{Adam, Graph, Real, Tensor};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::config::{LossMode, TrainConfig};
use crate::error::{Error, Result};
use crate::models::layers::{Ctx, Mode};
use crate::models::loss::model_loss;
use crate::models::Model;
use crate::rng::{child, Domain};
use crate::spectral::{Dataset, NormalizerState, N_SPECIES};

/// Model-ready rows: normalized spectra and asinh-transformed targets.
#[derive(Clone, Debug, PartialEq)]
pub struct Prepared {
    pub x: Vec<f32>,
    pub y: Vec<f32>,
    pub width: usize,
    /// Dataset sample id of every row.
    pub ids: Vec<usize>,
}

impl Prepared {
    pub fn from_dataset(ds: &Dataset, norm: &NormalizerState, indices: &[usize]) -> Result<Self> {
        let rows = indices.iter().map(|&i| (ds.spectrum(i).iter().map(|&v| v as f64).collect(), ds.fluxes(i).to_vec()));
        Self::from_rows(rows, norm, indices.to_vec())
    }

    /// Rows of (raw spectrum, physical fluxes).
    pub fn from_rows(
        rows: impl IntoIterator<Item = (Vec<f64>, Vec<f64>)>,
        norm: &NormalizerState,
        ids: Vec<usize>,
    ) -> Result<Self> {
        let width = norm.n_wavelengths();
        let mut x = Vec::with_capacity(ids.len() * width);
        let mut y = Vec::with_capacity(ids.len() * N_SPECIES);
        for (spectrum, fluxes) in rows {
            x.extend(norm.apply(&spectrum)?.iter().map(|&v| v as f32));
            y.extend(norm.transform_fluxes(&fluxes)?.iter().map(|&v| v as f32));
        }
        if y.len() != ids.len() * N_SPECIES {
            return Err(Error::invalid("row count does not match ids"));
        }
        Ok(Self { x, y, width, ids })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Inputs `[B, 1, W]` and targets `[B, 8]` for the given rows.
    pub fn batch<T: Real>(&self, rows: &[usize]) -> (Tensor<T>, Tensor<T>) {
        let w = self.width;
        let mut x = Vec::with_capacity(rows.len() * w);
        let mut y = Vec::with_capacity(rows.len() * N_SPECIES);
        for &r in rows {
            x.extend(self.x[r * w..(r + 1) * w].iter().map(|&v| T::lit(v as f64)));
            y.extend(self.y[r * N_SPECIES..(r + 1) * N_SPECIES].iter().map(|&v| T::lit(v as f64)));
        }
        (
            Tensor::new([rows.len(), 1, w], x).expect("batch shape"),
            Tensor::new([rows.len(), N_SPECIES], y).expect("batch shape"),
        )
    }

    pub fn targets(&self) -> Vec<f64> {
        self.y.iter().map(|&v| v as f64).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_mse: f64,
    pub lr: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
    /// 1-based epoch of the lowest validation MSE.
    pub best_epoch: usize,
    pub best_val_mse: f64,
    pub stopped_early: bool,
}

/// Reduce-on-plateau learning rate with early stopping.
#[derive(Clone, Debug, PartialEq)]
pub struct Plateau {
    pub lr: f64,
    best: f64,
    since_best: usize,
    since_reduce: usize,
    patience: usize,
    factor: f64,
    min_lr: f64,
    stop_patience: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Verdict {
    pub improved: bool,
    pub stop: bool,
}

impl Plateau {
    pub fn new(cfg: &TrainConfig) -> Self {
        Self {
            lr: cfg.lr,
            best: f64::INFINITY,
            since_best: 0,
            since_reduce: 0,
            patience: cfg.plateau_patience,
            factor: cfg.lr_factor,
            min_lr: cfg.min_lr,
            stop_patience: cfg.stop_patience,
        }
    }

    /// Records one epoch's validation loss.
    pub fn observe(&mut self, val: f64) -> Verdict {
        if val < self.best {
            self.best = val;
            self.since_best = 0;
            self.since_reduce = 0;
            return Verdict { improved: true, stop: false };
        }
        self.since_best += 1;
        self.since_reduce += 1;
        if self.since_reduce >= self.patience {
            self.lr = (self.lr * self.factor).max(self.min_lr);
            self.since_reduce = 0;
        }
        Verdict { improved: false, stop: self.since_best >= self.stop_patience }
    }
}

/// Deterministic predictions `[N, 8]` (row-major) for every prepared row.
pub fn predict<T: Real>(model: &Model<T>, data: &Prepared, batch_size: usize) -> Result<Vec<f64>> {
    predict_with(model, data, batch_size, Mode::DETERMINISTIC, 0).map(|(m, _)| m)
}

/// Predictions under `mode`, with the RNG of batch `j` derived from
/// `stream` and `j`. Returns means and, when available, log-variances.
pub fn predict_with<T: Real>(
    model: &Model<T>,
    data: &Prepared,
    batch_size: usize,
    mode: Mode,
    stream: u64,
) -> Result<(Vec<f64>, Option<Vec<f64>>)> {
    let rows: Vec<usize> = (0..data.len()).collect();
    let mut means = Vec::with_capacity(data.len() * N_SPECIES);
    let mut log_vars: Option<Vec<f64>> = None;
    for (j, chunk) in rows.chunks(batch_size.max(1)).enumerate() {
        let g = Graph::inference();
        let (x, _) = data.batch::<T>(chunk);
        let cx = Ctx::bind(&g, &model.params, mode, child(stream, Domain::McPass, j as u64), false);
        let out = model.forward(&cx, g.constant(x))?;
        means.extend(g.value(out.mean).data().iter().map(|v| v.as_f64()));
        if let Some(lv) = out.log_var {
            log_vars.get_or_insert_with(Vec::new).extend(g.value(lv).data().iter().map(|v| v.as_f64()));
        }
    }
    Ok((means, log_vars))
}

pub fn mse(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.len().max(1) as f64
}

/// Per-epoch callback.
pub type EpochHook<'a> = &'a mut dyn FnMut(&EpochRecord);

/// Minibatch Adam with plateau scheduling and early stopping. On return
/// `model` holds the parameters of the best validation epoch.
pub fn train<T: Real>(
    model: &mut Model<T>,
    train: &Prepared,
    val: &Prepared,
    cfg: &TrainConfig,
    loss_mode: LossMode,
    seed: u64,
    mut on_epoch: Option<EpochHook<'_>>,
) -> Result<History> {
    cfg.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::invalid("training needs nonempty train and validation splits"));
    }
    let beta_kl = cfg.kl_weight.unwrap_or(1.0 / train.len() as f64);
    let mut adam = Adam::new(cfg.lr, model.params.tensors());
    let mut sched = Plateau::new(cfg);
    let mut history = History { best_val_mse: f64::INFINITY, ..History::default() };
    let mut best = model.params.clone();
    let val_targets = val.targets();
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut step = 0u64;
    let mode = model.training_mode();
    for epoch in 1..=cfg.epochs {
        let warming = epoch <= cfg.warmup_epochs && loss_mode == LossMode::Nll;
        let epoch_mode = if warming { LossMode::Mse } else { loss_mode };
        adam.lr = sched.lr;
        order.sort_unstable();
        order.shuffle(&mut child(seed, Domain::Shuffle, epoch as u64));
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let g = Graph::new();
            let (x, y) = train.batch::<T>(chunk);
            let cx = Ctx::bind(&g, &model.params, mode, child(seed, Domain::TrainStep, step), true);
            let out = model.forward(&cx, g.constant(x))?;
            let loss = model_loss(model, &cx, &out, g.constant(y), epoch_mode, beta_kl, cfg.nll_beta)?;
            total += g.value(loss).item().as_f64() * chunk.len() as f64;
            let mut grads = g.backward(loss);
            let grads: Vec<Option<Tensor<T>>> = cx.vars().iter().map(|&v| grads.take(v)).collect();
            adam.step(model.params.tensors_mut(), &grads)?;
            step += 1;
        }
        let val_mse = mse(&predict(model, val, 256)?, &val_targets);
        let record = EpochRecord { epoch, train_loss: total / train.len() as f64, val_mse, lr: sched.lr };
        if let Some(hook) = on_epoch.as_mut() {
            hook(&record);
        }
        history.epochs.push(record);
        if !val_mse.is_finite() {
            return Err(Error::invalid(format!("validation loss diverged at epoch {epoch}")));
        }
        if warming {
            continue;
        }
        let verdict = sched.observe(val_mse);
        if verdict.improved {
            history.best_epoch = epoch;
            history.best_val_mse = val_mse;
            best = model.params.clone();
        }
        if verdict.stop {
            history.stopped_early = true;
            break;
        }
    }
    model.params = best;
    Ok(history)
}
