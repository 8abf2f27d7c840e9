use crate::error::{Result, TensorError};
use crate::graph::{Graph, Var};
use crate::real::Real;
use crate::tensor::shape_str;

/// Transformation applied to post-softmax attention `[B, h, T_q, T_k]`
/// before it weights the values. Must map simplex rows to simplex rows.
pub type AttnHook<'a, T> = &'a dyn Fn(&Graph<T>, Var) -> Result<Var>;

const SIMPLEX_TOL: f64 = 1e-4;

impl<T: Real> Graph<T> {
    /// Scaled dot-product attention split over `heads`.
    ///
    /// `q` is `[B, T_q, D]`, `k` and `v` are `[B, T_k, D]`; inputs are
    /// already projected. Returns the merged output `[B, T_q, D]` and the
    /// (post-hook) attention `[B, heads, T_q, T_k]` that produced it.
    pub fn multi_head_attention(
        &self,
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        hook: Option<AttnHook<'_, T>>,
    ) -> Result<(Var, Var)> {
        let (qs, ks, vs) = (self.shape(q), self.shape(k), self.shape(v));
        if qs.len() != 3 || ks.len() != 3 || ks != vs || qs[0] != ks[0] || qs[2] != ks[2] {
            return Err(TensorError::shape(
                "multi_head_attention",
                "q [B, T_q, D], k = v [B, T_k, D]",
                format!("{} / {} / {}", shape_str(&qs), shape_str(&ks), shape_str(&vs)),
            ));
        }
        let (b, tq, d) = (qs[0], qs[1], qs[2]);
        let tk = ks[1];
        if heads == 0 || d % heads != 0 {
            return Err(TensorError::invalid(
                "multi_head_attention",
                format!("model dimension {d} is not divisible by {heads} heads"),
            ));
        }
        let dh = d / heads;
        let split = |x: Var, t: usize| -> Result<Var> {
            let x = self.reshape(x, &[b, t, heads, dh])?;
            let x = self.permute(x, &[0, 2, 1, 3])?;
            self.reshape(x, &[b * heads, t, dh])
        };
        // scaling the queries is cheaper than scaling the T_q × T_k scores
        let q = self.scale(q, T::lit(1.0 / (dh as f64).sqrt()));
        let (qh, kh, vh) = (split(q, tq)?, split(k, tk)?, split(v, tk)?);
        let scores = self.bmm_nt(qh, kh)?;
        let attn = self.reshape(self.softmax(scores), &[b, heads, tq, tk])?;
        let attn = match hook {
            Some(h) => {
                let mixed = h(self, attn)?;
                if self.shape(mixed) != [b, heads, tq, tk] {
                    return Err(TensorError::shape(
                        "multi_head_attention hook",
                        shape_str(&[b, heads, tq, tk]),
                        shape_str(&self.shape(mixed)),
                    ));
                }
                check_simplex_rows(self.value(mixed).data(), tk)?;
                mixed
            }
            None => attn,
        };
        let ctx = self.bmm(self.reshape(attn, &[b * heads, tq, tk])?, vh)?;
        let ctx = self.reshape(ctx, &[b, heads, tq, dh])?;
        let ctx = self.permute(ctx, &[0, 2, 1, 3])?;
        Ok((self.reshape(ctx, &[b, tq, d])?, attn))
    }
}

fn check_simplex_rows<T: Real>(data: &[T], width: usize) -> Result<()> {
    for (i, row) in data.chunks(width).enumerate() {
        let total: f64 = row.iter().map(|v| v.as_f64()).sum();
        if row.iter().any(|p| p.as_f64() < -SIMPLEX_TOL) || (total - 1.0).abs() > SIMPLEX_TOL {
            return Err(TensorError::invalid(
                "multi_head_attention hook",
                format!("attention row {i} is not a probability vector (sum {total})"),
            ));
        }
    }
    Ok(())
}
