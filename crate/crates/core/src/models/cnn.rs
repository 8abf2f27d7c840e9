use autodiff::{Conv1dSpec, Real, Var};

use crate::config::{BcnnConfig, CnnConfig};
use crate::error::{Error, Result};
use crate::models::layers::{Conv, Ctx, Linear, VarConv, VarLinear};
use crate::models::params::ParamStore;
use crate::models::{check_input, ModelOutput};
use crate::rng::Rng;
use crate::spectral::N_SPECIES;

const POOL: usize = 2;

fn flat_dim(cfg: &CnnConfig, input_len: usize) -> Result<usize> {
    let mut len = input_len;
    for _ in &cfg.filters {
        len /= POOL;
        if len == 0 {
            return Err(Error::invalid(format!(
                "input length {input_len} is too short for {} pooling blocks",
                cfg.filters.len()
            )));
        }
    }
    Ok(len * cfg.filters.last().copied().unwrap_or(1))
}

/// Conv–ReLU–MaxPool blocks, then ReLU/dropout dense layers and a linear
/// head.
#[derive(Clone, Debug, PartialEq)]
pub struct Cnn {
    pub convs: Vec<Conv>,
    pub fcs: Vec<Linear>,
    pub head: Linear,
    pub dropout: f64,
    pub input_len: usize,
}

impl Cnn {
    pub fn build<T: Real>(cfg: &CnnConfig, input_len: usize, ps: &mut ParamStore<T>, rng: &mut Rng) -> Result<Self> {
        cfg.validate()?;
        let flat = flat_dim(cfg, input_len)?;
        let mut c_in = 1;
        let mut convs = Vec::new();
        for (i, (&c, &k)) in cfg.filters.iter().zip(&cfg.kernels).enumerate() {
            convs.push(Conv::new(ps, &format!("conv{i}"), c_in, c, k, Conv1dSpec::same(k), rng));
            c_in = c;
        }
        let mut d_in = flat;
        let mut fcs = Vec::new();
        for (i, &d) in cfg.fc.iter().enumerate() {
            fcs.push(Linear::new(ps, &format!("fc{i}"), d_in, d, rng));
            d_in = d;
        }
        let head = Linear::new(ps, "head", d_in, N_SPECIES, rng);
        Ok(Self { convs, fcs, head, dropout: cfg.dropout, input_len })
    }

    pub fn forward<T: Real>(&self, cx: &Ctx<'_, T>, x: Var) -> Result<ModelOutput> {
        let b = check_input(cx.g, x, self.input_len)?;
        let g = cx.g;
        let mut h = x;
        for conv in &self.convs {
            h = g.max_pool1d(g.relu(conv.forward(cx, h)?), POOL, POOL)?;
        }
        let flat = g.shape(h)[1..].iter().product::<usize>();
        h = g.reshape(h, &[b, flat])?;
        for fc in &self.fcs {
            h = cx.dropout(g.relu(fc.forward(cx, h)?), self.dropout)?;
        }
        Ok(ModelOutput { mean: self.head.forward(cx, h)?, log_var: None, attention: None })
    }
}

/// Same topology as [`Cnn`] with variational layers and a mean/log-variance
/// head.
#[derive(Clone, Debug, PartialEq)]
pub struct Bcnn {
    pub convs: Vec<VarConv>,
    pub fcs: Vec<VarLinear>,
    pub head: VarLinear,
    pub dropout: f64,
    pub input_len: usize,
}

impl Bcnn {
    pub fn build<T: Real>(cfg: &BcnnConfig, input_len: usize, ps: &mut ParamStore<T>, rng: &mut Rng) -> Result<Self> {
        let net = &cfg.net;
        net.validate()?;
        let flat = flat_dim(net, input_len)?;
        let s = cfg.init_sigma;
        let mut c_in = 1;
        let mut convs = Vec::new();
        for (i, (&c, &k)) in net.filters.iter().zip(&net.kernels).enumerate() {
            convs.push(VarConv::new(ps, &format!("conv{i}"), c_in, c, k, Conv1dSpec::same(k), s, rng));
            c_in = c;
        }
        let mut d_in = flat;
        let mut fcs = Vec::new();
        for (i, &d) in net.fc.iter().enumerate() {
            fcs.push(VarLinear::new(ps, &format!("fc{i}"), d_in, d, s, rng));
            d_in = d;
        }
        let head = VarLinear::new(ps, "head", d_in, 2 * N_SPECIES, s, rng);
        Ok(Self { convs, fcs, head, dropout: net.dropout, input_len })
    }

    pub fn forward<T: Real>(&self, cx: &Ctx<'_, T>, x: Var) -> Result<ModelOutput> {
        let b = check_input(cx.g, x, self.input_len)?;
        let g = cx.g;
        let mut h = x;
        for conv in &self.convs {
            h = g.max_pool1d(g.relu(conv.forward(cx, h)?), POOL, POOL)?;
        }
        let flat = g.shape(h)[1..].iter().product::<usize>();
        h = g.reshape(h, &[b, flat])?;
        for fc in &self.fcs {
            h = cx.dropout(g.relu(fc.forward(cx, h)?), self.dropout)?;
        }
        let out = self.head.forward(cx, h)?;
        Ok(ModelOutput {
            mean: g.narrow(out, 1, 0, N_SPECIES)?,
            log_var: Some(g.narrow(out, 1, N_SPECIES, N_SPECIES)?),
            attention: None,
        })
    }

    /// Summed KL of every posterior to the standard normal prior.
    pub fn kl<T: Real>(&self, cx: &Ctx<'_, T>) -> Result<Var> {
        let mut terms = Vec::new();
        for (w, b) in self
            .convs
            .iter()
            .map(|c| (c.w, c.b))
            .chain(self.fcs.iter().chain([&self.head]).map(|l| (l.w, l.b)))
        {
            terms.push(w.kl(cx)?);
            terms.push(b.kl(cx)?);
        }
        let mut total = terms[0];
        for t in &terms[1..] {
            total = cx.g.add(total, *t)?;
        }
        Ok(total)
    }

    /// Indices of every `ρ` tensor.
    pub fn rho_indices(&self) -> Vec<usize> {
        self.convs
            .iter()
            .flat_map(|c| [c.w.rho, c.b.rho])
            .chain(self.fcs.iter().chain([&self.head]).flat_map(|l| [l.w.rho, l.b.rho]))
            .collect()
    }
}
