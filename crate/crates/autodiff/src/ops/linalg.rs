use crate::error::{Result, TensorError};
use crate::graph::{Graph, Var};
use crate::real::{gemm, MatRef, Real};
use crate::tensor::{shape_str, Tensor};

impl<T: Real> Graph<T> {
    /// Dense layer: `x[..., in] · wᵀ + b` with `w` of shape `[out, in]`.
    pub fn linear(&self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (xv, wv) = (self.value(x), self.value(w));
        if wv.ndim() != 2 {
            return Err(TensorError::shape("linear", "weight [out, in]", shape_str(wv.shape())));
        }
        let (out_f, in_f) = (wv.shape()[0], wv.shape()[1]);
        if xv.shape().last() != Some(&in_f) {
            return Err(TensorError::shape(
                "linear",
                format!("input [..., {in_f}]"),
                shape_str(xv.shape()),
            ));
        }
        let bv = match b {
            Some(b) => {
                let bv = self.value(b);
                if bv.shape() != [out_f] {
                    return Err(TensorError::shape("linear", format!("bias [{out_f}]"), shape_str(bv.shape())));
                }
                Some(bv)
            }
            None => None,
        };
        let rows = xv.numel() / in_f;
        let mut out = Vec::with_capacity(rows * out_f);
        match &bv {
            Some(bv) => {
                for _ in 0..rows {
                    out.extend_from_slice(bv.data());
                }
            }
            None => out.resize(rows * out_f, T::zero()),
        }
        gemm(MatRef::new(xv.data(), rows, in_f), MatRef::new(wv.data(), out_f, in_f).t(), T::one(), &mut out);
        let mut shape = xv.shape().to_vec();
        *shape.last_mut().unwrap() = out_f;
        let mut parents = vec![x, w];
        parents.extend(b);
        Ok(self.op("linear", Tensor::from_parts(shape, out), &parents, move |g, sink| {
            let gm = MatRef::new(g, rows, out_f);
            if let Some(dx) = sink.buffer(x) {
                gemm(gm, MatRef::new(wv.data(), out_f, in_f), T::one(), dx);
            }
            if let Some(dw) = sink.buffer(w) {
                gemm(gm.t(), MatRef::new(xv.data(), rows, in_f), T::one(), dw);
            }
            if let Some(b) = b {
                if let Some(db) = sink.buffer(b) {
                    for row in g.chunks(out_f) {
                        for (d, &v) in db.iter_mut().zip(row) {
                            *d += v;
                        }
                    }
                }
            }
        }))
    }

    /// Batched product `a[B, M, K] · b[B, K, N]`.
    pub fn bmm(&self, a: Var, b: Var) -> Result<Var> {
        self.bmm_impl(a, b, false)
    }

    /// Batched product against a transposed right operand:
    /// `a[B, M, K] · b[B, N, K]ᵀ`.
    pub fn bmm_nt(&self, a: Var, b: Var) -> Result<Var> {
        self.bmm_impl(a, b, true)
    }

    fn bmm_impl(&self, a: Var, b: Var, trans_b: bool) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.ndim() != 3 || bv.ndim() != 3 || av.shape()[0] != bv.shape()[0] {
            return Err(TensorError::shape(
                "bmm",
                "two rank-3 tensors with equal batch",
                format!("{} and {}", shape_str(av.shape()), shape_str(bv.shape())),
            ));
        }
        let (batch, m, k) = (av.shape()[0], av.shape()[1], av.shape()[2]);
        let (kb, n) = if trans_b { (bv.shape()[2], bv.shape()[1]) } else { (bv.shape()[1], bv.shape()[2]) };
        if kb != k {
            return Err(TensorError::shape(
                "bmm",
                format!("inner dimension {k}"),
                format!("{} (right operand {})", kb, shape_str(bv.shape())),
            ));
        }
        let (sa, sb, sc) = (m * k, k * n, m * n);
        let (brows, bcols) = if trans_b { (n, k) } else { (k, n) };
        let mut out = vec![T::zero(); batch * sc];
        for i in 0..batch {
            let bm = MatRef::new(&bv.data()[i * sb..(i + 1) * sb], brows, bcols);
            let bm = if trans_b { bm.t() } else { bm };
            gemm(
                MatRef::new(&av.data()[i * sa..(i + 1) * sa], m, k),
                bm,
                T::zero(),
                &mut out[i * sc..(i + 1) * sc],
            );
        }
        Ok(self.op("bmm", Tensor::from_parts(vec![batch, m, n], out), &[a, b], move |g, sink| {
            if let Some(da) = sink.buffer(a) {
                for i in 0..batch {
                    let gm = MatRef::new(&g[i * sc..(i + 1) * sc], m, n);
                    let bm = MatRef::new(&bv.data()[i * sb..(i + 1) * sb], brows, bcols);
                    // dA = dC·Bᵀ, or dC·B when B was read transposed
                    let bm = if trans_b { bm } else { bm.t() };
                    gemm(gm, bm, T::one(), &mut da[i * sa..(i + 1) * sa]);
                }
            }
            if let Some(db) = sink.buffer(b) {
                for i in 0..batch {
                    let gm = MatRef::new(&g[i * sc..(i + 1) * sc], m, n);
                    let am = MatRef::new(&av.data()[i * sa..(i + 1) * sa], m, k);
                    let dst = &mut db[i * sb..(i + 1) * sb];
                    if trans_b {
                        // B is [N, K]: dB = dCᵀ·A
                        gemm(gm.t(), am, T::one(), dst);
                    } else {
                        gemm(am.t(), gm, T::one(), dst);
                    }
                }
            }
        }))
    }
}
