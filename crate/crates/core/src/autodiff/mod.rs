//! Reverse-mode automatic differentiation over dense `f64` arrays.
//!
//! A [`Graph`] records every operation of one forward pass (define-by-run).
//! Nodes are appended in evaluation order, so the node list is already a
//! topological order and [`Graph::backward`] is a single reverse sweep.
//! Persistent trainable values live in a [`ParamStore`]; a graph binds them
//! as leaves and reports their adjoints as [`Gradients`].
//!
//! Graphs use interior mutability and are confined to one thread. Batched
//! training builds one graph per sequence and sums the resulting
//! [`Gradients`] in a fixed order.

mod graph;
mod ops;
mod params;
mod tensor;

pub use graph::{Graph, Var};
pub use params::{Constraint, Gradients, ParamEntry, ParamGroup, ParamId, ParamStore};
pub use tensor::Tensor;


use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AutodiffError {
    #[error("{op}: incompatible shapes {lhs:?} and {rhs:?}")]
    Shape { op: &'static str, lhs: Vec<usize>, rhs: Vec<usize> },
    #[error("{op}: argument outside domain ({detail})")]
    Domain { op: &'static str, detail: String },
    #[error("{op}: axis {axis} out of range for shape {shape:?}")]
    Axis { op: &'static str, axis: usize, shape: Vec<usize> },
    #[error("{op}: index {index} out of bounds for extent {len}")]
    Index { op: &'static str, index: usize, len: usize },
    #[error("backward needs a scalar root, got shape {0:?}")]
    NonScalarRoot(Vec<usize>),
}
