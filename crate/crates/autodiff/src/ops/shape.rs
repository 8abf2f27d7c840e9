use crate::error::{Result, TensorError};
use crate::graph::{Graph, Var};
use crate::real::Real;
use crate::tensor::{shape_str, Tensor};

fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

/// Gather indices such that `out[i] = in[index[i]]` for a permutation.
fn permute_index(shape: &[usize], axes: &[usize]) -> Vec<usize> {
    let in_strides = strides(shape);
    let out_shape: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
    let n: usize = shape.iter().product();
    let mut index = Vec::with_capacity(n);
    let mut counter = vec![0usize; shape.len()];
    for _ in 0..n {
        index.push(counter.iter().zip(axes).map(|(&c, &a)| c * in_strides[a]).sum());
        for d in (0..counter.len()).rev() {
            counter[d] += 1;
            if counter[d] < out_shape[d] {
                break;
            }
            counter[d] = 0;
        }
    }
    index
}

impl<T: Real> Graph<T> {
    pub fn reshape(&self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x).reshape(shape.to_vec())?;
        Ok(self.view(out, x))
    }

    /// Reorders axes: output axis `i` is input axis `axes[i]`.
    pub fn permute(&self, x: Var, axes: &[usize]) -> Result<Var> {
        let xv = self.value(x);
        let nd = xv.ndim();
        let mut seen = vec![false; nd];
        if axes.len() != nd || axes.iter().any(|&a| a >= nd || std::mem::replace(&mut seen[a], true)) {
            return Err(TensorError::invalid(
                "permute",
                format!("{axes:?} is not a permutation of {nd} axes"),
            ));
        }
        // when the last axis stays put, move contiguous rows instead of scalars
        let inner = if axes[nd - 1] == nd - 1 { xv.shape()[nd - 1] } else { 1 };
        let index: Vec<usize> = if inner > 1 {
            let outer_shape = &xv.shape()[..nd - 1];
            permute_index(outer_shape, &axes[..nd - 1])
        } else {
            permute_index(xv.shape(), axes)
        };
        let mut out: Vec<T> = Vec::with_capacity(xv.numel());
        for &i in &index {
            out.extend_from_slice(&xv.data()[i * inner..(i + 1) * inner]);
        }
        let shape = axes.iter().map(|&a| xv.shape()[a]).collect();
        Ok(self.op("permute", Tensor::from_parts(shape, out), &[x], move |g, sink| {
            if let Some(dx) = sink.buffer(x) {
                for (&i, gv) in index.iter().zip(g.chunks(inner)) {
                    for (d, &v) in dx[i * inner..(i + 1) * inner].iter_mut().zip(gv) {
                        *d += v;
                    }
                }
            }
        }))
    }

    /// Concatenates along `axis`; all other extents must agree.
    pub fn concat(&self, xs: &[Var], axis: usize) -> Result<Var> {
        let vals: Vec<Tensor<T>> = xs.iter().map(|&v| self.value(v)).collect();
        let first = vals.first().ok_or_else(|| TensorError::invalid("concat", "no inputs"))?;
        if axis >= first.ndim() {
            return Err(TensorError::invalid("concat", format!("axis {axis} out of range")));
        }
        for v in &vals[1..] {
            let compatible = v.ndim() == first.ndim()
                && v.shape().iter().zip(first.shape()).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(TensorError::shape("concat", shape_str(first.shape()), shape_str(v.shape())));
            }
        }
        let outer: usize = first.shape()[..axis].iter().product();
        let inner: usize = first.shape()[axis + 1..].iter().product();
        let widths: Vec<usize> = vals.iter().map(|v| v.shape()[axis] * inner).collect();
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(outer * total);
        for o in 0..outer {
            for (v, &w) in vals.iter().zip(&widths) {
                out.extend_from_slice(&v.data()[o * w..(o + 1) * w]);
            }
        }
        let mut shape = first.shape().to_vec();
        shape[axis] = vals.iter().map(|v| v.shape()[axis]).sum();
        let parents = xs.to_vec();
        let parents_bw = parents.clone();
        Ok(self.op("concat", Tensor::from_parts(shape, out), &parents, move |g, sink| {
            let mut offset = 0;
            for (&p, &w) in parents_bw.iter().zip(&widths) {
                if let Some(dx) = sink.buffer(p) {
                    for o in 0..outer {
                        let src = &g[o * total + offset..o * total + offset + w];
                        for (d, &s) in dx[o * w..(o + 1) * w].iter_mut().zip(src) {
                            *d += s;
                        }
                    }
                }
                offset += w;
            }
        }))
    }

    /// Slice `len` entries starting at `start` along `axis`.
    pub fn narrow(&self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let xv = self.value(x);
        if axis >= xv.ndim() || start + len > xv.shape()[axis] {
            return Err(TensorError::invalid(
                "narrow",
                format!("range {start}..{} on axis {axis} of {}", start + len, shape_str(xv.shape())),
            ));
        }
        let outer: usize = xv.shape()[..axis].iter().product();
        let inner: usize = xv.shape()[axis + 1..].iter().product();
        let full = xv.shape()[axis] * inner;
        let (off, w) = (start * inner, len * inner);
        let mut out = Vec::with_capacity(outer * w);
        for o in 0..outer {
            out.extend_from_slice(&xv.data()[o * full + off..o * full + off + w]);
        }
        let mut shape = xv.shape().to_vec();
        shape[axis] = len;
        Ok(self.op("narrow", Tensor::from_parts(shape, out), &[x], move |g, sink| {
            if let Some(dx) = sink.buffer(x) {
                for o in 0..outer {
                    for (d, &s) in dx[o * full + off..o * full + off + w].iter_mut().zip(&g[o * w..(o + 1) * w]) {
                        *d += s;
                    }
                }
            }
        }))
    }

    /// Repeats `x` along a new leading axis of length `n`.
    pub fn expand_leading(&self, x: Var, n: usize) -> Var {
        let xv = self.value(x);
        let inner = xv.numel();
        let mut out = Vec::with_capacity(n * inner);
        for _ in 0..n {
            out.extend_from_slice(xv.data());
        }
        let mut shape = vec![n];
        shape.extend_from_slice(xv.shape());
        self.op("expand_leading", Tensor::from_parts(shape, out), &[x], move |g, sink| {
            if let Some(dx) = sink.buffer(x) {
                for chunk in g.chunks(inner) {
                    for (d, &s) in dx.iter_mut().zip(chunk) {
                        *d += s;
                    }
                }
            }
        })
    }
}
