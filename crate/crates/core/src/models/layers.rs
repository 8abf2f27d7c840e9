use std::cell::RefCell;

use autodiff::{Conv1dSpec, Graph, Real, Tensor, Var};
use rand_distr::{Distribution, StandardNormal};

use crate::error::Result;
use crate::models::params::ParamStore;
use crate::rng::Rng;

/// Which stochastic components are active in a forward pass.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Mode {
    pub dropout: bool,
    pub sample_weights: bool,
}

impl Mode {
    pub const DETERMINISTIC: Mode = Mode { dropout: false, sample_weights: false };
}

/// Parameters bound to a graph for one forward pass.
pub struct Ctx<'g, T: Real> {
    pub g: &'g Graph<T>,
    vars: Vec<Var>,
    pub mode: Mode,
    rng: RefCell<Rng>,
}

impl<'g, T: Real> Ctx<'g, T> {
    /// Binds every parameter; as trainable leaves when `trainable`.
    pub fn bind(g: &'g Graph<T>, params: &ParamStore<T>, mode: Mode, rng: Rng, trainable: bool) -> Self {
        let vars = params
            .tensors()
            .iter()
            .map(|t| if trainable { g.param(t.clone()) } else { g.constant(t.clone()) })
            .collect();
        Self { g, vars, mode, rng: RefCell::new(rng) }
    }

    /// Uses existing variables as the parameters (in store order).
    pub fn from_vars(g: &'g Graph<T>, vars: Vec<Var>, mode: Mode, rng: Rng) -> Self {
        Self { g, vars, mode, rng: RefCell::new(rng) }
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }

    pub fn p(&self, i: usize) -> Var {
        self.vars[i]
    }

    pub fn dropout(&self, x: Var, p: f64) -> Result<Var> {
        if !self.mode.dropout || p == 0.0 {
            return Ok(x);
        }
        Ok(self.g.dropout(x, p, Some(&mut *self.rng.borrow_mut()))?)
    }

    /// Standard normal noise of the given shape.
    pub fn noise(&self, shape: &[usize]) -> Tensor<T> {
        let mut rng = self.rng.borrow_mut();
        Tensor::from_fn(shape.to_vec(), |_| {
            let e: f64 = StandardNormal.sample(&mut *rng);
            T::lit(e)
        })
    }
}

fn fan_in_bound(fan_in: usize) -> f64 {
    1.0 / (fan_in as f64).sqrt()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Linear {
    pub w: usize,
    pub b: usize,
}

impl Linear {
    pub fn new<T: Real>(ps: &mut ParamStore<T>, name: &str, d_in: usize, d_out: usize, rng: &mut Rng) -> Self {
        let bound = fan_in_bound(d_in);
        let w = ps.add_uniform(format!("{name}.weight"), &[d_out, d_in], bound, rng);
        let b = ps.add_uniform(format!("{name}.bias"), &[d_out], bound, rng);
        Self { w, b }
    }

    pub fn forward<T: Real>(&self, cx: &Ctx<'_, T>, x: Var) -> Result<Var> {
        Ok(cx.g.linear(x, cx.p(self.w), Some(cx.p(self.b)))?)
    }

    /// Sets weight and bias to zero.
    pub fn zero<T: Real>(&self, ps: &mut ParamStore<T>) {
        for i in [self.w, self.b] {
            ps.get_mut(i).data_mut().iter_mut().for_each(|v| *v = T::zero());
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Conv {
    pub w: usize,
    pub b: usize,
    pub spec: Conv1dSpec,
}

impl Conv {
    pub fn new<T: Real>(
        ps: &mut ParamStore<T>,
        name: &str,
        c_in: usize,
        c_out: usize,
        kernel: usize,
        spec: Conv1dSpec,
        rng: &mut Rng,
    ) -> Self {
        let bound = fan_in_bound(c_in * kernel);
        let w = ps.add_uniform(format!("{name}.weight"), &[c_out, c_in, kernel], bound, rng);
        let b = ps.add_uniform(format!("{name}.bias"), &[c_out], bound, rng);
        Self { w, b, spec }
    }

    pub fn forward<T: Real>(&self, cx: &Ctx<'_, T>, x: Var) -> Result<Var> {
        Ok(cx.g.conv1d(x, cx.p(self.w), Some(cx.p(self.b)), self.spec)?)
    }
}

/// Diagonal Gaussian posterior over one tensor: `w = μ + softplus(ρ)·ε`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Variational {
    pub mu: usize,
    pub rho: usize,
}

impl Variational {
    fn new<T: Real>(ps: &mut ParamStore<T>, name: &str, shape: &[usize], bound: f64, rho0: f64, rng: &mut Rng) -> Self {
        let mu = ps.add_uniform(format!("{name}.mu"), shape, bound, rng);
        let rho = ps.add_full(format!("{name}.rho"), shape, rho0);
        Self { mu, rho }
    }

    /// Sampled weight in stochastic mode, the posterior mean otherwise.
    pub fn weight<T: Real>(&self, cx: &Ctx<'_, T>) -> Result<Var> {
        let mu = cx.p(self.mu);
        if !cx.mode.sample_weights {
            return Ok(mu);
        }
        let sigma = cx.g.softplus(cx.p(self.rho));
        let eps = cx.g.constant(cx.noise(&cx.g.shape(mu)));
        Ok(cx.g.add(mu, cx.g.mul(sigma, eps)?)?)
    }

    /// KL to the standard normal prior.
    pub fn kl<T: Real>(&self, cx: &Ctx<'_, T>) -> Result<Var> {
        let sigma = cx.g.softplus(cx.p(self.rho));
        Ok(cx.g.kl_diag_gaussian(cx.p(self.mu), sigma)?)
    }
}

/// `ρ` such that `softplus(ρ) = sigma`.
pub fn inverse_softplus(sigma: f64) -> f64 {
    sigma + (-(-sigma).exp_m1()).ln()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct VarLinear {
    pub w: Variational,
    pub b: Variational,
}

impl VarLinear {
    pub fn new<T: Real>(
        ps: &mut ParamStore<T>,
        name: &str,
        d_in: usize,
        d_out: usize,
        init_sigma: f64,
        rng: &mut Rng,
    ) -> Self {
        let (bound, rho0) = (fan_in_bound(d_in), inverse_softplus(init_sigma));
        let w = Variational::new(ps, &format!("{name}.weight"), &[d_out, d_in], bound, rho0, rng);
        let b = Variational::new(ps, &format!("{name}.bias"), &[d_out], bound, rho0, rng);
        Self { w, b }
    }

    pub fn forward<T: Real>(&self, cx: &Ctx<'_, T>, x: Var) -> Result<Var> {
        Ok(cx.g.linear(x, self.w.weight(cx)?, Some(self.b.weight(cx)?))?)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct VarConv {
    pub w: Variational,
    pub b: Variational,
    pub spec: Conv1dSpec,
}

impl VarConv {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Real>(
        ps: &mut ParamStore<T>,
        name: &str,
        c_in: usize,
        c_out: usize,
        kernel: usize,
        spec: Conv1dSpec,
        init_sigma: f64,
        rng: &mut Rng,
    ) -> Self {
        let (bound, rho0) = (fan_in_bound(c_in * kernel), inverse_softplus(init_sigma));
        let w = Variational::new(ps, &format!("{name}.weight"), &[c_out, c_in, kernel], bound, rho0, rng);
        let b = Variational::new(ps, &format!("{name}.bias"), &[c_out], bound, rho0, rng);
        Self { w, b, spec }
    }

    pub fn forward<T: Real>(&self, cx: &Ctx<'_, T>, x: Var) -> Result<Var> {
        Ok(cx.g.conv1d(x, self.w.weight(cx)?, Some(self.b.weight(cx)?), self.spec)?)
    }
}

pub const LN_EPS: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LayerNorm {
    pub gamma: usize,
    pub beta: usize,
}

impl LayerNorm {
    pub fn new<T: Real>(ps: &mut ParamStore<T>, name: &str, dim: usize) -> Self {
        let gamma = ps.add_full(format!("{name}.gamma"), &[dim], 1.0);
        let beta = ps.add_full(format!("{name}.beta"), &[dim], 0.0);
        Self { gamma, beta }
    }

    pub fn forward<T: Real>(&self, cx: &Ctx<'_, T>, x: Var) -> Result<Var> {
        Ok(cx.g.layer_norm(x, cx.p(self.gamma), cx.p(self.beta), LN_EPS)?)
    }
}

/// Projected multi-head attention: `o(MHA(q(x_q), k(x_kv), v(x_kv)))`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Attention {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
    pub heads: usize,
}

impl Attention {
    pub fn new<T: Real>(ps: &mut ParamStore<T>, name: &str, dim: usize, heads: usize, rng: &mut Rng) -> Self {
        Self {
            q: Linear::new(ps, &format!("{name}.q"), dim, dim, rng),
            k: Linear::new(ps, &format!("{name}.k"), dim, dim, rng),
            v: Linear::new(ps, &format!("{name}.v"), dim, dim, rng),
            o: Linear::new(ps, &format!("{name}.o"), dim, dim, rng),
            heads,
        }
    }

    /// Returns the projected output and the attention weights.
    pub fn forward<T: Real>(
        &self,
        cx: &Ctx<'_, T>,
        x_q: Var,
        x_kv: Var,
        hook: Option<autodiff::AttnHook<'_, T>>,
    ) -> Result<(Var, Var)> {
        let q = self.q.forward(cx, x_q)?;
        let k = self.k.forward(cx, x_kv)?;
        let v = self.v.forward(cx, x_kv)?;
        let (ctx, attn) = cx.g.multi_head_attention(q, k, v, self.heads, hook)?;
        Ok((self.o.forward(cx, ctx)?, attn))
    }
}

/// Pre-norm transformer encoder layer with a GELU MLP.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EncoderLayer {
    pub ln1: LayerNorm,
    pub attn: Attention,
    pub ln2: LayerNorm,
    pub fc1: Linear,
    pub fc2: Linear,
    pub dropout: f64,
}

impl EncoderLayer {
    pub fn new<T: Real>(
        ps: &mut ParamStore<T>,
        name: &str,
        dim: usize,
        heads: usize,
        mlp_ratio: usize,
        dropout: f64,
        rng: &mut Rng,
    ) -> Self {
        Self {
            ln1: LayerNorm::new(ps, &format!("{name}.ln1"), dim),
            attn: Attention::new(ps, &format!("{name}.attn"), dim, heads, rng),
            ln2: LayerNorm::new(ps, &format!("{name}.ln2"), dim),
            fc1: Linear::new(ps, &format!("{name}.fc1"), dim, dim * mlp_ratio, rng),
            fc2: Linear::new(ps, &format!("{name}.fc2"), dim * mlp_ratio, dim, rng),
            dropout,
        }
    }

    pub fn forward<T: Real>(&self, cx: &Ctx<'_, T>, x: Var) -> Result<Var> {
        let g = cx.g;
        let h = self.ln1.forward(cx, x)?;
        let (a, _) = self.attn.forward(cx, h, h, None)?;
        let x = g.add(x, cx.dropout(a, self.dropout)?)?;
        let h = self.ln2.forward(cx, x)?;
        let h = self.fc2.forward(cx, g.gelu(self.fc1.forward(cx, h)?))?;
        Ok(g.add(x, cx.dropout(h, self.dropout)?)?)
    }
}
