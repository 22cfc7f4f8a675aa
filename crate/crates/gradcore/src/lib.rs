//! Reverse-mode automatic differentiation over small dense tensors.
//!
//! A [`Graph`] records operations eagerly; every node keeps its forward value
//! and [`Graph::backward`] walks the nodes in reverse creation order, which is
//! a valid reverse topological order because nodes can only refer to nodes
//! created before them. Build a fresh graph per training step.

mod checkpoint;
mod error;
mod graph;
mod kernels;
mod optim;
mod params;
mod tensor;

pub use crate::checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, OP_SET_VERSION};
pub use crate::error::{GradError, Result};
pub use crate::graph::{Gradients, Graph, Var};
pub use crate::optim::AdamW;
pub use crate::params::{BoundParams, ParamStore};
pub use crate::tensor::Tensor;
