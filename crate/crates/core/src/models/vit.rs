use autodiff::{Conv1dSpec, Real, Var};

use crate::config::VitConfig;
use crate::error::{Error, Result};
use crate::models::layers::{Conv, Ctx, EncoderLayer, LayerNorm, Linear};
use crate::models::params::ParamStore;
use crate::models::{check_input, ModelOutput, EMBED_INIT};
use crate::rng::Rng;
use crate::spectral::N_SPECIES;

/// Overlapping-patch transformer with a CLS readout.
#[derive(Clone, Debug, PartialEq)]
pub struct Vit {
    pub patch: Conv,
    pub cls: usize,
    pub pos: usize,
    pub layers: Vec<EncoderLayer>,
    pub ln: LayerNorm,
    pub head: Linear,
    pub dim: usize,
    pub dropout: f64,
    pub input_len: usize,
}

impl Vit {
    /// Tokens seen by the encoder: patches plus CLS.
    pub fn token_count(input_len: usize, patch_size: usize) -> Option<usize> {
        Conv1dSpec::new(1, 0).output_len(input_len, patch_size).map(|n| n + 1)
    }

    pub fn build<T: Real>(cfg: &VitConfig, input_len: usize, ps: &mut ParamStore<T>, rng: &mut Rng) -> Result<Self> {
        let e = &cfg.encoder;
        e.validate()?;
        let tokens = Self::token_count(input_len, cfg.patch_size).ok_or_else(|| {
            Error::invalid(format!("input length {input_len} is shorter than patch size {}", cfg.patch_size))
        })?;
        let patch = Conv::new(ps, "patch", 1, e.dim, cfg.patch_size, Conv1dSpec::new(1, 0), rng);
        let cls = ps.add_uniform("cls", &[e.dim], EMBED_INIT, rng);
        let pos = ps.add_uniform("pos", &[tokens, e.dim], EMBED_INIT, rng);
        let layers = (0..e.layers)
            .map(|i| EncoderLayer::new(ps, &format!("enc{i}"), e.dim, e.heads, e.mlp_ratio, e.dropout, rng))
            .collect();
        let ln = LayerNorm::new(ps, "ln", e.dim);
        let head = Linear::new(ps, "head", e.dim, N_SPECIES, rng);
        Ok(Self { patch, cls, pos, layers, ln, head, dim: e.dim, dropout: e.dropout, input_len })
    }

    pub fn forward<T: Real>(&self, cx: &Ctx<'_, T>, x: Var) -> Result<ModelOutput> {
        let b = check_input(cx.g, x, self.input_len)?;
        let g = cx.g;
        let patches = g.permute(self.patch.forward(cx, x)?, &[0, 2, 1])?;
        let cls = g.reshape(g.expand_leading(cx.p(self.cls), b), &[b, 1, self.dim])?;
        let mut h = g.add_broadcast(g.concat(&[cls, patches], 1)?, cx.p(self.pos))?;
        h = cx.dropout(h, self.dropout)?;
        for layer in &self.layers {
            h = layer.forward(cx, h)?;
        }
        let h = self.ln.forward(cx, h)?;
        let cls_out = g.reshape(g.narrow(h, 1, 0, 1)?, &[b, self.dim])?;
        Ok(ModelOutput { mean: self.head.forward(cx, cls_out)?, log_var: None, attention: None })
    }
}
