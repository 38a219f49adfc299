//! Dense tensors, reverse-mode differentiation and the Adam optimizer.

mod adam;
mod graph;
pub mod kernels;
mod param;
mod tensor;

pub use adam::{adam_step, OptimizerConfig};
pub use graph::{Graph, NodeId, Reduction, IGNORE_INDEX};
pub use param::{Gradients, ParamId, ParamStore, Parameter};
pub use tensor::Tensor;
