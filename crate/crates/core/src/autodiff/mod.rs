//! Reverse-mode automatic differentiation over [`Tensor`](crate::numerics::Tensor)
//! expressions.
//!
//! A [`Graph`] records operations as they are evaluated. [`Graph::backward`]
//! returns adjoints for every node, and [`jacobian`] stacks one reverse sweep
//! per output coordinate. Only first derivatives are supported.

mod graph;
mod jacobian;

pub use graph::{Gradients, Graph, Op, Var};
pub use jacobian::{jacobian, JacobianMatrix};
