use rand::Rng;

use crate::error::{Result, TensorError};
use crate::graph::{Graph, Var};
use crate::real::Real;
use crate::tensor::{shape_str, Tensor};

const SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;
const GELU_C: f64 = 0.044_715;

impl<T: Real> Graph<T> {
    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<(Tensor<T>, Tensor<T>)> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(TensorError::shape(op, shape_str(av.shape()), shape_str(bv.shape())));
        }
        Ok((av, bv))
    }

    pub fn add(&self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = self.same_shape("add", a, b)?;
        let out: Vec<T> = av.data().iter().zip(bv.data()).map(|(&x, &y)| x + y).collect();
        Ok(self.op("add", Tensor::from_parts(av.shape().to_vec(), out), &[a, b], move |g, sink| {
            sink.accumulate(a, g);
            sink.accumulate(b, g);
        }))
    }

    pub fn sub(&self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = self.same_shape("sub", a, b)?;
        let out: Vec<T> = av.data().iter().zip(bv.data()).map(|(&x, &y)| x - y).collect();
        Ok(self.op("sub", Tensor::from_parts(av.shape().to_vec(), out), &[a, b], move |g, sink| {
            sink.accumulate(a, g);
            if let Some(buf) = sink.buffer(b) {
                for (d, &x) in buf.iter_mut().zip(g) {
                    *d -= x;
                }
            }
        }))
    }

    /// Elementwise product.
    pub fn mul(&self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = self.same_shape("mul", a, b)?;
        let out: Vec<T> = av.data().iter().zip(bv.data()).map(|(&x, &y)| x * y).collect();
        Ok(self.op("mul", Tensor::from_parts(av.shape().to_vec(), out), &[a, b], move |g, sink| {
            if let Some(buf) = sink.buffer(a) {
                for ((d, &gi), &y) in buf.iter_mut().zip(g).zip(bv.data()) {
                    *d += gi * y;
                }
            }
            if let Some(buf) = sink.buffer(b) {
                for ((d, &gi), &x) in buf.iter_mut().zip(g).zip(av.data()) {
                    *d += gi * x;
                }
            }
        }))
    }

    /// `a + b` where the shape of `b` is a trailing suffix of the shape of
    /// `a` (bias vectors, positional tables).
    pub fn add_broadcast(&self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let (ash, bsh) = (av.shape(), bv.shape());
        if bsh.len() > ash.len() || ash[ash.len() - bsh.len()..] != *bsh {
            return Err(TensorError::shape(
                "add_broadcast",
                format!("trailing dims of {}", shape_str(ash)),
                shape_str(bsh),
            ));
        }
        let inner = bv.numel();
        let out: Vec<T> = av
            .data()
            .chunks(inner)
            .flat_map(|row| row.iter().zip(bv.data()).map(|(&x, &y)| x + y))
            .collect();
        Ok(self.op("add_broadcast", Tensor::from_parts(ash.to_vec(), out), &[a, b], move |g, sink| {
            sink.accumulate(a, g);
            if let Some(buf) = sink.buffer(b) {
                for row in g.chunks(inner) {
                    for (d, &x) in buf.iter_mut().zip(row) {
                        *d += x;
                    }
                }
            }
        }))
    }

    pub fn scale(&self, a: Var, c: T) -> Var {
        let av = self.value(a);
        let out = av.map(|x| x * c);
        self.op("scale", out, &[a], move |g, sink| {
            if let Some(buf) = sink.buffer(a) {
                for (d, &x) in buf.iter_mut().zip(g) {
                    *d += x * c;
                }
            }
        })
    }

    pub fn add_scalar(&self, a: Var, c: T) -> Var {
        let out = self.value(a).map(|x| x + c);
        self.op("add_scalar", out, &[a], move |g, sink| sink.accumulate(a, g))
    }

    pub fn neg(&self, a: Var) -> Var {
        self.scale(a, -T::one())
    }

    /// Elementwise map with derivative `df(x, y)` where `y = f(x)`.
    fn unary(
        &self,
        name: &'static str,
        a: Var,
        f: impl Fn(T) -> T,
        df: impl Fn(T, T) -> T + 'static,
    ) -> Var {
        let av = self.value(a);
        let out = av.map(f);
        let y = out.clone();
        self.op(name, out, &[a], move |g, sink| {
            if let Some(buf) = sink.buffer(a) {
                for (((d, &gi), &x), &yi) in buf.iter_mut().zip(g).zip(av.data()).zip(y.data()) {
                    *d += gi * df(x, yi);
                }
            }
        })
    }

    pub fn relu(&self, a: Var) -> Var {
        self.unary(
            "relu",
            a,
            |x| if x > T::zero() { x } else { T::zero() },
            |x, _| if x > T::zero() { T::one() } else { T::zero() },
        )
    }

    /// GELU, tanh approximation.
    pub fn gelu(&self, a: Var) -> Var {
        let k = T::lit(SQRT_2_OVER_PI);
        let c = T::lit(GELU_C);
        let half = T::lit(0.5);
        self.unary(
            "gelu",
            a,
            move |x| half * x * (T::one() + (k * (x + c * x * x * x)).tanh()),
            move |x, _| {
                let u = k * (x + c * x * x * x);
                let t = u.tanh();
                let du = k * (T::one() + T::lit(3.0) * c * x * x);
                half * (T::one() + t) + half * x * (T::one() - t * t) * du
            },
        )
    }

    pub fn tanh(&self, a: Var) -> Var {
        self.unary("tanh", a, |x| x.tanh(), |_, y| T::one() - y * y)
    }

    pub fn exp(&self, a: Var) -> Var {
        self.unary("exp", a, |x| x.exp(), |_, y| y)
    }

    pub fn log(&self, a: Var) -> Var {
        self.unary("log", a, |x| x.ln(), |x, _| T::one() / x)
    }

    pub fn square(&self, a: Var) -> Var {
        self.unary("square", a, |x| x * x, |x, _| T::lit(2.0) * x)
    }

    pub fn sigmoid(&self, a: Var) -> Var {
        self.unary("sigmoid", a, sigmoid, |_, y| y * (T::one() - y))
    }

    /// `ln(1 + e^x)`, evaluated stably.
    pub fn softplus(&self, a: Var) -> Var {
        self.unary("softplus", a, softplus, |x, _| sigmoid(x))
    }

    pub fn sum(&self, a: Var) -> Var {
        let av = self.value(a);
        let total = av.data().iter().copied().sum::<T>();
        self.op("sum", Tensor::scalar(total), &[a], move |g, sink| {
            if let Some(buf) = sink.buffer(a) {
                for d in buf.iter_mut() {
                    *d += g[0];
                }
            }
        })
    }

    pub fn mean(&self, a: Var) -> Var {
        let n = self.value(a).numel();
        let s = self.sum(a);
        self.scale(s, T::one() / T::lit(n as f64))
    }

    /// Inverted dropout: zeroes each element with probability `p` and
    /// scales survivors by `1/(1-p)`. Pass-through when `rng` is `None`
    /// (inference) or `p == 0`.
    pub fn dropout<R: Rng + ?Sized>(&self, a: Var, p: f64, rng: Option<&mut R>) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(TensorError::invalid("dropout", format!("probability must be in [0, 1), got {p}")));
        }
        let Some(rng) = rng else { return Ok(a) };
        if p == 0.0 {
            return Ok(a);
        }
        let av = self.value(a);
        let keep = T::lit(1.0 / (1.0 - p));
        let mask: Vec<T> = (0..av.numel())
            .map(|_| if rng.random::<f64>() < p { T::zero() } else { keep })
            .collect();
        let mask = self.constant(Tensor::from_parts(av.shape().to_vec(), mask));
        self.mul(a, mask)
    }
}

pub fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

pub fn softplus<T: Real>(x: T) -> T {
    if x > T::lit(30.0) {
        x
    } else {
        x.max(T::zero()) + (-(x.abs())).exp().ln_1p()
    }
}
