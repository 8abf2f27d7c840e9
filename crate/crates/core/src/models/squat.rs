use autodiff::{Conv1dSpec, Graph, Real, Tensor, TensorError, Var};

use crate::config::SquatConfig;
use crate::error::{Error, Result};
use crate::models::layers::{Attention, Conv, Ctx, EncoderLayer, LayerNorm, Linear};
use crate::models::params::ParamStore;
use crate::models::{check_input, ModelOutput, EMBED_INIT};
use crate::rng::Rng;
use crate::spectral::{SpeciesCatalog, N_SPECIES};

/// Row-stochastic `K × T` attention prior: row `s` concentrates on the
/// absorption bands of species `s`.
#[derive(Clone, Debug, PartialEq)]
pub struct PriorMask {
    rows: usize,
    tokens: usize,
    p: Vec<f64>,
}

impl PriorMask {
    /// Row `s` is the normalized sum over the species' bands of Gaussians
    /// centred on the band with standard deviation
    /// `width_scale · half_width`; a species without bands (or whose bands
    /// vanish on every token) gets the uniform row.
    pub fn build(catalog: &SpeciesCatalog, token_centers: &[f64], width_scale: f64) -> Result<Self> {
        if token_centers.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::invalid("token centers must be strictly increasing"));
        }
        let t = token_centers.len();
        let mut p = Vec::with_capacity(catalog.species.len() * t);
        for s in &catalog.species {
            let row: Vec<f64> = token_centers
                .iter()
                .map(|&l| {
                    s.bands
                        .iter()
                        .map(|b| {
                            let z = (l - b.center_um) / (width_scale * b.half_width_um);
                            (-0.5 * z * z).exp()
                        })
                        .sum()
                })
                .collect();
            let total: f64 = row.iter().sum();
            if total > 0.0 && total.is_finite() {
                p.extend(row.iter().map(|v| v / total));
            } else {
                p.extend(std::iter::repeat_n(1.0 / t as f64, t));
            }
        }
        Ok(Self { rows: catalog.species.len(), tokens: t, p })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn tokens(&self) -> usize {
        self.tokens
    }

    pub fn row(&self, s: usize) -> &[f64] {
        &self.p[s * self.tokens..(s + 1) * self.tokens]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.p
    }

    pub fn tensor<T: Real>(&self) -> Tensor<T> {
        Tensor::from_fn([self.rows, self.tokens], |i| T::lit(self.p[i]))
    }
}

/// `(1 − α)·a + α·p` for one attention row.
pub fn mix_prior(a: &[f64], p: &[f64], alpha: f64) -> Vec<f64> {
    a.iter().zip(p).map(|(&a, &p)| (1.0 - alpha) * a + alpha * p).collect()
}

/// Mixes attention `a[B, h, K, T]` with the prior rows `p[K, T]` using
/// per-row weights `alpha[K]`, identically for every head. Differentiable in
/// `a` and `alpha`.
pub fn prior_mix<T: Real>(g: &Graph<T>, a: Var, alpha: Var, p: &Tensor<T>) -> autodiff::Result<Var> {
    let (av, alv) = (g.value(a), g.value(alpha));
    let shape = av.shape().to_vec();
    if shape.len() != 4 || p.shape() != [shape[2], shape[3]] || alv.shape() != [shape[2]] {
        return Err(TensorError::InvalidArgument {
            op: "prior_mix",
            reason: format!(
                "needs attention [B, h, K, T] with prior [K, T] and alpha [K]; got {:?}, {:?}, {:?}",
                shape,
                p.shape(),
                alv.shape()
            ),
        });
    }
    let (k, t) = (shape[2], shape[3]);
    let out: Vec<T> = av
        .data()
        .chunks(t)
        .enumerate()
        .flat_map(|(r, row)| {
            let s = r % k;
            let al = alv.data()[s];
            let prow = &p.data()[s * t..(s + 1) * t];
            row.iter().zip(prow).map(move |(&x, &q)| (T::one() - al) * x + al * q).collect::<Vec<_>>()
        })
        .collect();
    let p = p.clone();
    Ok(g.op("prior_mix", Tensor::new(shape, out)?, &[a, alpha], move |grad, sink| {
        if let Some(da) = sink.buffer(a) {
            for (r, (drow, grow)) in da.chunks_mut(t).zip(grad.chunks(t)).enumerate() {
                let keep = T::one() - alv.data()[r % k];
                for (d, &gv) in drow.iter_mut().zip(grow) {
                    *d += keep * gv;
                }
            }
        }
        if let Some(dal) = sink.buffer(alpha) {
            for (r, (grow, arow)) in grad.chunks(t).zip(av.data().chunks(t)).enumerate() {
                let s = r % k;
                let prow = &p.data()[s * t..(s + 1) * t];
                dal[s] += grow.iter().zip(arow).zip(prow).map(|((&gv, &x), &q)| gv * (q - x)).sum::<T>();
            }
        }
    }))
}

/// Species-query attention transformer.
#[derive(Clone, Debug, PartialEq)]
pub struct Squat {
    pub branches: Vec<Conv>,
    pub proj: Linear,
    pub pos: usize,
    pub layers: Vec<EncoderLayer>,
    pub ln_enc: LayerNorm,
    pub queries: usize,
    pub alpha_logits: usize,
    pub cross: Attention,
    pub ln_cross: LayerNorm,
    pub interaction: Attention,
    pub head1: Linear,
    pub head2: Linear,
    pub prior: PriorMask,
    pub prior_enabled: bool,
    pub dim: usize,
    pub dropout: f64,
    pub input_len: usize,
}

impl Squat {
    /// Tokens map one-to-one to grid points, so `token_centers` is the
    /// wavelength grid.
    pub fn build<T: Real>(
        cfg: &SquatConfig,
        catalog: &SpeciesCatalog,
        token_centers: &[f64],
        ps: &mut ParamStore<T>,
        rng: &mut Rng,
    ) -> Result<Self> {
        cfg.validate()?;
        let e = &cfg.encoder;
        let d = e.dim;
        let t = token_centers.len();
        if let Some(&k) = cfg.patch_sizes.iter().find(|&&k| k > t) {
            return Err(Error::invalid(format!("patch size {k} exceeds input length {t}")));
        }
        let c = cfg.branch_channels.unwrap_or(d);
        let branches = cfg
            .patch_sizes
            .iter()
            .map(|&k| Conv::new(ps, &format!("branch{k}"), 1, c, k, Conv1dSpec::same(k), rng))
            .collect::<Vec<_>>();
        let proj = Linear::new(ps, "proj", c * branches.len(), d, rng);
        let pos = ps.add_uniform("pos", &[t, d], EMBED_INIT, rng);
        let layers = (0..e.layers)
            .map(|i| EncoderLayer::new(ps, &format!("enc{i}"), d, e.heads, e.mlp_ratio, e.dropout, rng))
            .collect();
        let ln_enc = LayerNorm::new(ps, "ln_enc", d);
        let queries = ps.add_uniform("queries", &[N_SPECIES, d], 1.0, rng);
        let alpha_logits = ps.add_full("alpha_logits", &[N_SPECIES], 0.0);
        let cross = Attention::new(ps, "cross", d, e.heads, rng);
        let ln_cross = LayerNorm::new(ps, "ln_cross", d);
        let interaction = Attention::new(ps, "interaction", d, cfg.interaction_heads, rng);
        let head1 = Linear::new(ps, "head1", d, d / 2, rng);
        let head2 = Linear::new(ps, "head2", d / 2, 1, rng);
        let prior = PriorMask::build(catalog, token_centers, cfg.prior_width_scale)?;
        Ok(Self {
            branches,
            proj,
            pos,
            layers,
            ln_enc,
            queries,
            alpha_logits,
            cross,
            ln_cross,
            interaction,
            head1,
            head2,
            prior,
            prior_enabled: cfg.prior_enabled,
            dim: d,
            dropout: e.dropout,
            input_len: t,
        })
    }

    /// Spectrum `[B, 1, T]` to encoded tokens `[B, T, D]`.
    pub fn encode<T: Real>(&self, cx: &Ctx<'_, T>, x: Var) -> Result<Var> {
        check_input(cx.g, x, self.input_len)?;
        let g = cx.g;
        let feats = self.branches.iter().map(|b| Ok(g.gelu(b.forward(cx, x)?))).collect::<Result<Vec<_>>>()?;
        let h = g.permute(g.concat(&feats, 1)?, &[0, 2, 1])?;
        let h = g.add_broadcast(self.proj.forward(cx, h)?, cx.p(self.pos))?;
        let mut h = cx.dropout(h, self.dropout)?;
        for layer in &self.layers {
            h = layer.forward(cx, h)?;
        }
        self.ln_enc.forward(cx, h)
    }

    /// Cross-attention of `queries[B, K, D]` over `tokens[B, T, D]` with the
    /// prior mixed into every head. Returns the projected species
    /// embeddings and the mixed attention `[B, h, K, T]`.
    pub fn biased_cross_attention<T: Real>(&self, cx: &Ctx<'_, T>, queries: Var, tokens: Var) -> Result<(Var, Var)> {
        let g = cx.g;
        let t = g.shape(tokens)[1];
        if t != self.prior.tokens() {
            return Err(Error::invalid(format!(
                "prior mask covers {} tokens but the encoder produced {t}",
                self.prior.tokens()
            )));
        }
        if !self.prior_enabled {
            return self.cross.forward(cx, queries, tokens, None);
        }
        let alpha = g.sigmoid(cx.p(self.alpha_logits));
        let p = self.prior.tensor::<T>();
        let hook = move |g: &Graph<T>, a: Var| prior_mix(g, a, alpha, &p);
        self.cross.forward(cx, queries, tokens, Some(&hook))
    }

    /// Species embeddings before (`E1`) and after (`E2`) the interaction
    /// block, plus the cross-attention.
    pub fn embeddings<T: Real>(&self, cx: &Ctx<'_, T>, x: Var) -> Result<(Var, Var, Var)> {
        let g = cx.g;
        let tokens = self.encode(cx, x)?;
        let b = g.shape(tokens)[0];
        let q = g.expand_leading(cx.p(self.queries), b);
        let (cross, attn) = self.biased_cross_attention(cx, q, tokens)?;
        let e1 = self.ln_cross.forward(cx, g.add(q, cx.dropout(cross, self.dropout)?)?)?;
        let (inter, _) = self.interaction.forward(cx, e1, e1, None)?;
        let e2 = g.add(e1, cx.dropout(inter, self.dropout)?)?;
        Ok((e1, e2, attn))
    }

    /// Shared per-species head: `[B, K, D]` to `[B, K]`.
    pub fn head<T: Real>(&self, cx: &Ctx<'_, T>, emb: Var) -> Result<Var> {
        let g = cx.g;
        let shape = g.shape(emb);
        let h = g.gelu(self.head1.forward(cx, emb)?);
        let out = self.head2.forward(cx, h)?;
        Ok(g.reshape(out, &shape[..2])?)
    }

    pub fn forward<T: Real>(&self, cx: &Ctx<'_, T>, x: Var) -> Result<ModelOutput> {
        let (_, e2, attn) = self.embeddings(cx, x)?;
        Ok(ModelOutput { mean: self.head(cx, e2)?, log_var: None, attention: Some(attn) })
    }
}
