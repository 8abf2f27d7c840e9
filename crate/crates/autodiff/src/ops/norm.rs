use crate::error::{Result, TensorError};
use crate::graph::{Graph, Var};
use crate::real::Real;
use crate::tensor::{shape_str, Tensor};

impl<T: Real> Graph<T> {
    /// Softmax over the last axis.
    pub fn softmax(&self, x: Var) -> Var {
        let xv = self.value(x);
        let n = *xv.shape().last().unwrap_or(&1);
        let mut out = Vec::with_capacity(xv.numel());
        for row in xv.data().chunks(n) {
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let start = out.len();
            out.extend(row.iter().map(|&v| v - max));
            let dst = &mut out[start..];
            T::exp_in_place(dst);
            let inv = T::one() / dst.iter().copied().sum::<T>();
            for v in dst {
                *v *= inv;
            }
        }
        let y = Tensor::from_parts(xv.shape().to_vec(), out);
        let yv = y.clone();
        self.op("softmax", y, &[x], move |g, sink| {
            if let Some(dx) = sink.buffer(x) {
                for ((drow, grow), yrow) in dx.chunks_mut(n).zip(g.chunks(n)).zip(yv.data().chunks(n)) {
                    let dot = grow.iter().zip(yrow).map(|(&a, &b)| a * b).sum::<T>();
                    for ((d, &gi), &yi) in drow.iter_mut().zip(grow).zip(yrow) {
                        *d += yi * (gi - dot);
                    }
                }
            }
        })
    }

    /// Layer normalization over the last axis with affine `gamma`, `beta`.
    pub fn layer_norm(&self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let (xv, gv, bv) = (self.value(x), self.value(gamma), self.value(beta));
        let n = *xv.shape().last().unwrap_or(&1);
        if gv.shape() != [n] || bv.shape() != [n] {
            return Err(TensorError::shape(
                "layer_norm",
                format!("gamma/beta [{n}]"),
                format!("{} / {}", shape_str(gv.shape()), shape_str(bv.shape())),
            ));
        }
        let eps = T::lit(eps);
        let inv_n = T::one() / T::lit(n as f64);
        let rows = xv.numel() / n;
        let mut xhat = Vec::with_capacity(xv.numel());
        let mut inv_std = Vec::with_capacity(rows);
        for row in xv.data().chunks(n) {
            let mean = row.iter().copied().sum::<T>() * inv_n;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() * inv_n;
            let is = T::one() / (var + eps).sqrt();
            inv_std.push(is);
            xhat.extend(row.iter().map(|&v| (v - mean) * is));
        }
        let out: Vec<T> = xhat
            .chunks(n)
            .flat_map(|row| row.iter().zip(gv.data()).zip(bv.data()).map(|((&h, &ga), &be)| h * ga + be))
            .collect();
        Ok(self.op(
            "layer_norm",
            Tensor::from_parts(xv.shape().to_vec(), out),
            &[x, gamma, beta],
            move |g, sink| {
                if let Some(dg) = sink.buffer(gamma) {
                    for (grow, hrow) in g.chunks(n).zip(xhat.chunks(n)) {
                        for ((d, &gi), &h) in dg.iter_mut().zip(grow).zip(hrow) {
                            *d += gi * h;
                        }
                    }
                }
                if let Some(db) = sink.buffer(beta) {
                    for grow in g.chunks(n) {
                        for (d, &gi) in db.iter_mut().zip(grow) {
                            *d += gi;
                        }
                    }
                }
                if let Some(dx) = sink.buffer(x) {
                    for (r, ((drow, grow), hrow)) in dx.chunks_mut(n).zip(g.chunks(n)).zip(xhat.chunks(n)).enumerate() {
                        // dxhat = g * gamma
                        let mut sum_d = T::zero();
                        let mut sum_dh = T::zero();
                        for ((&gi, &ga), &h) in grow.iter().zip(gv.data()).zip(hrow) {
                            let d = gi * ga;
                            sum_d += d;
                            sum_dh += d * h;
                        }
                        let is = inv_std[r];
                        for (((dst, &gi), &ga), &h) in drow.iter_mut().zip(grow).zip(gv.data()).zip(hrow) {
                            *dst += is * (gi * ga - inv_n * sum_d - h * inv_n * sum_dh);
                        }
                    }
                }
            },
        ))
    }
}
