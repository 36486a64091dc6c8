//! Differentiable operations, implemented as methods on [`Var`](crate::Var).

pub(crate) mod conv;
pub(crate) mod elementwise;
pub(crate) mod layout;
pub(crate) mod matmul;
pub(crate) mod reduce;
pub(crate) mod sampling;
pub(crate) mod softmax;

pub use elementwise::{sigmoid, softplus};
