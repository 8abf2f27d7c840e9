//! Differentiable operations, grouped by kind. All are methods on
//! [`Graph`](crate::Graph).

mod attention;
mod conv;
mod elementwise;
mod linalg;
mod loss;
mod norm;
mod shape;

pub use attention::AttnHook;
pub use conv::Conv1dSpec;
pub use elementwise::{sigmoid, softplus};
