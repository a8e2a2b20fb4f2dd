//! Differentiable primitives, parameters, Adam and checkpoints.

pub mod adam;
pub mod checkpoint;
pub mod gradcheck;
mod graph;
pub mod kernels;
pub mod layers;
pub mod loss;
mod params;
mod tensor;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use graph::{GradMode, Gradients, Graph, Var};
pub use kernels::{AttentionPlan, Padding, QuerySpec, Score};
pub use layers::{linear, Activation, Conv1d, Linear, LstmCell, LstmState, Mlp, MultiHeadAttention};
pub use loss::{mae_sum, mse_grad, mse_loss};
pub use params::{Group, Param, ParamId, ParameterSet};
pub use tensor::Tensor;
