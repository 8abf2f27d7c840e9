#![allow(clippy::neg_cmp_op_on_partial_ord)]
//! Reverse-mode automatic differentiation over dense row-major tensors.
//!
//! A [`Graph`] records every operation applied to its [`Var`]s; calling
//! [`Graph::backward`] on a scalar output walks the tape once in reverse
//! and returns [`Gradients`] for every leaf created with [`Graph::param`].
//!
//! ```
//! use autodiff::{Graph, Tensor};
//!
//! let g = Graph::<f64>::new();
//! let x = g.param(Tensor::new([2], vec![1.0, -3.0]).unwrap());
//! let loss = g.sum(g.square(x));
//! let grads = g.backward(loss);
//! assert_eq!(grads.get(x).unwrap().data(), &[2.0, -6.0]);
//! ```

mod error;
mod graph;
mod ops;
mod real;
mod tensor;

pub mod gradcheck;
pub mod optim;

pub use error::{Result, TensorError};
pub use gradcheck::{grad_check, grad_check_many, GradCheckReport};
pub use graph::{GradSink, Gradients, Graph, Var};
pub use ops::{AttnHook, Conv1dSpec};
pub use optim::Adam;
pub use real::Real;
pub use tensor::Tensor;

/// Numerically stable scalar helpers shared with model code.
pub mod scalar {
    pub use crate::ops::{sigmoid, softplus};
}
