//! Dense arrays and reverse-mode differentiation.

mod array;
pub mod fd;
mod graph;
pub(crate) mod kernels;

pub use array::DenseArray;
pub use graph::{Binary, Graph, Reduce, Role, Unary, Var, BCE_EPS};
