use crate::error::{Result, TensorError};
use crate::graph::{Graph, Var};
use crate::real::{gemm, MatRef, Real};
use crate::tensor::{shape_str, Tensor};

/// Geometry of a 1D convolution. Padding may be asymmetric so that even
/// kernels can still produce "same" length outputs.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Conv1dSpec {
    pub stride: usize,
    pub pad_left: usize,
    pub pad_right: usize,
}

impl Conv1dSpec {
    pub fn new(stride: usize, padding: usize) -> Self {
        Self { stride, pad_left: padding, pad_right: padding }
    }

    /// Stride 1 with padding chosen so the output length equals the input
    /// length. Even kernels put the extra zero on the right.
    pub fn same(kernel: usize) -> Self {
        let total = kernel.saturating_sub(1);
        Self { stride: 1, pad_left: total / 2, pad_right: total - total / 2 }
    }

    pub fn output_len(&self, len: usize, kernel: usize) -> Option<usize> {
        let padded = len + self.pad_left + self.pad_right;
        if self.stride == 0 || kernel == 0 || kernel > padded {
            return None;
        }
        Some((padded - kernel) / self.stride + 1)
    }
}

impl<T: Real> Graph<T> {
    /// Cross-correlation of `x[B, C_in, L]` with `w[C_out, C_in, k]` plus
    /// an optional per-channel bias.
    pub fn conv1d(&self, x: Var, w: Var, b: Option<Var>, spec: Conv1dSpec) -> Result<Var> {
        let (xv, wv) = (self.value(x), self.value(w));
        if xv.ndim() != 3 {
            return Err(TensorError::shape("conv1d", "input [B, C_in, L]", shape_str(xv.shape())));
        }
        if wv.ndim() != 3 || wv.shape()[1] != xv.shape()[1] {
            return Err(TensorError::shape(
                "conv1d",
                format!("weight [C_out, {}, k]", xv.shape()[1]),
                shape_str(wv.shape()),
            ));
        }
        let (batch, c_in, len) = (xv.shape()[0], xv.shape()[1], xv.shape()[2]);
        let (c_out, kernel) = (wv.shape()[0], wv.shape()[2]);
        let l_out = spec.output_len(len, kernel).ok_or_else(|| {
            TensorError::invalid(
                "conv1d",
                format!(
                    "kernel {kernel} with stride {} does not fit length {len} padded by {}+{}",
                    spec.stride, spec.pad_left, spec.pad_right
                ),
            )
        })?;
        let bv = match b {
            Some(b) => {
                let bv = self.value(b);
                if bv.shape() != [c_out] {
                    return Err(TensorError::shape("conv1d", format!("bias [{c_out}]"), shape_str(bv.shape())));
                }
                Some(bv)
            }
            None => None,
        };

        let patch = c_in * kernel;
        let ncols = batch * l_out;
        let cols = im2col(xv.data(), batch, c_in, len, kernel, l_out, spec);
        let mut out_mat = vec![T::zero(); c_out * ncols];
        if let Some(bv) = &bv {
            for (row, &bias) in out_mat.chunks_mut(ncols).zip(bv.data()) {
                row.fill(bias);
            }
        }
        gemm(MatRef::new(wv.data(), c_out, patch), MatRef::new(&cols, patch, ncols), T::one(), &mut out_mat);
        // [C_out, B, L_out] -> [B, C_out, L_out]
        let mut out = vec![T::zero(); batch * c_out * l_out];
        for co in 0..c_out {
            for bi in 0..batch {
                let src = &out_mat[co * ncols + bi * l_out..co * ncols + (bi + 1) * l_out];
                out[(bi * c_out + co) * l_out..(bi * c_out + co + 1) * l_out].copy_from_slice(src);
            }
        }

        let mut parents = vec![x, w];
        parents.extend(b);
        Ok(self.op(
            "conv1d",
            Tensor::from_parts(vec![batch, c_out, l_out], out),
            &parents,
            move |g, sink| {
                let mut g_mat = vec![T::zero(); c_out * ncols];
                for bi in 0..batch {
                    for co in 0..c_out {
                        let src = &g[(bi * c_out + co) * l_out..(bi * c_out + co + 1) * l_out];
                        g_mat[co * ncols + bi * l_out..co * ncols + (bi + 1) * l_out].copy_from_slice(src);
                    }
                }
                let gm = MatRef::new(&g_mat, c_out, ncols);
                if let Some(dw) = sink.buffer(w) {
                    gemm(gm, MatRef::new(&cols, patch, ncols).t(), T::one(), dw);
                }
                if let Some(b) = b {
                    if let Some(db) = sink.buffer(b) {
                        for (d, row) in db.iter_mut().zip(g_mat.chunks(ncols)) {
                            *d += row.iter().copied().sum::<T>();
                        }
                    }
                }
                if sink.wants(x) {
                    let mut dcols = vec![T::zero(); patch * ncols];
                    gemm(MatRef::new(wv.data(), c_out, patch).t(), gm, T::zero(), &mut dcols);
                    if let Some(dx) = sink.buffer(x) {
                        col2im(&dcols, dx, batch, c_in, len, kernel, l_out, spec);
                    }
                }
            },
        ))
    }

    /// Max pooling over the last axis.
    pub fn max_pool1d(&self, x: Var, kernel: usize, stride: usize) -> Result<Var> {
        let xv = self.value(x);
        let len = *xv.shape().last().ok_or_else(|| TensorError::invalid("max_pool1d", "scalar input"))?;
        if kernel == 0 || stride == 0 || kernel > len {
            return Err(TensorError::invalid(
                "max_pool1d",
                format!("kernel {kernel}, stride {stride} invalid for length {len}"),
            ));
        }
        let l_out = (len - kernel) / stride + 1;
        let rows = xv.numel() / len;
        let mut out = Vec::with_capacity(rows * l_out);
        let mut arg = Vec::with_capacity(rows * l_out);
        for (r, row) in xv.data().chunks(len).enumerate() {
            for o in 0..l_out {
                let start = o * stride;
                let mut best = start;
                for i in start + 1..start + kernel {
                    if row[i] > row[best] {
                        best = i;
                    }
                }
                out.push(row[best]);
                arg.push(r * len + best);
            }
        }
        let mut shape = xv.shape().to_vec();
        *shape.last_mut().unwrap() = l_out;
        Ok(self.op("max_pool1d", Tensor::from_parts(shape, out), &[x], move |g, sink| {
            if let Some(dx) = sink.buffer(x) {
                for (&src, &gv) in arg.iter().zip(g) {
                    dx[src] += gv;
                }
            }
        }))
    }
}

fn im2col<T: Real>(
    x: &[T],
    batch: usize,
    c_in: usize,
    len: usize,
    kernel: usize,
    l_out: usize,
    spec: Conv1dSpec,
) -> Vec<T> {
    let ncols = batch * l_out;
    let mut cols = vec![T::zero(); c_in * kernel * ncols];
    for c in 0..c_in {
        for j in 0..kernel {
            let row = &mut cols[(c * kernel + j) * ncols..(c * kernel + j + 1) * ncols];
            for bi in 0..batch {
                let xrow = &x[(bi * c_in + c) * len..(bi * c_in + c + 1) * len];
                for o in 0..l_out {
                    let pos = (o * spec.stride + j) as isize - spec.pad_left as isize;
                    if pos >= 0 && (pos as usize) < len {
                        row[bi * l_out + o] = xrow[pos as usize];
                    }
                }
            }
        }
    }
    cols
}

#[allow(clippy::too_many_arguments)]
fn col2im<T: Real>(
    dcols: &[T],
    dx: &mut [T],
    batch: usize,
    c_in: usize,
    len: usize,
    kernel: usize,
    l_out: usize,
    spec: Conv1dSpec,
) {
    let ncols = batch * l_out;
    for c in 0..c_in {
        for j in 0..kernel {
            let row = &dcols[(c * kernel + j) * ncols..(c * kernel + j + 1) * ncols];
            for bi in 0..batch {
                let dxrow = &mut dx[(bi * c_in + c) * len..(bi * c_in + c + 1) * len];
                for o in 0..l_out {
                    let pos = (o * spec.stride + j) as isize - spec.pad_left as isize;
                    if pos >= 0 && (pos as usize) < len {
                        dxrow[pos as usize] += row[bi * l_out + o];
                    }
                }
            }
        }
    }
}
