//! Dense-array reverse-mode differentiation, optimizers and checkpoints.

pub mod checkpoint;
mod graph;
pub(crate) mod kernels;
mod optim;
mod params;

pub use graph::{Graph, Var, SIGMA_FLOOR};
pub use kernels::conv3x3_direct;
pub use optim::{Optimizer, OptimizerKind, ADAM_BETA1, ADAM_BETA2, ADAM_EPS};
pub use params::{Gradients, ParamId, ParamStore};
