//! Reverse-mode differentiation, parameters, optimization and checkpoints.

pub mod checkpoint;
pub mod gradcheck;
pub mod graph;
pub mod nn;
pub mod ops;
pub mod optim;
pub mod params;
pub mod tensor;

pub use checkpoint::Checkpoint;
pub use gradcheck::{check_gradient, check_param_gradients, relative_error};
pub use graph::{Gradients, Graph, NodeId, Op};
pub use nn::ConvGeometry;
pub use optim::{adam_step, clip_global_norm, global_norm, AdamConfig, LrSchedule, OptimizerState};
pub use params::ParamStore;
pub use tensor::Tensor;
