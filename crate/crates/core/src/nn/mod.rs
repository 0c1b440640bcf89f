//! Differentiable network core: layers, losses, optimizer, model specs.

pub mod conv;
pub mod dense;
pub mod loss;
pub mod model;
pub mod network;
pub mod ops;
pub mod optim;

pub use conv::{conv2d_backward, conv2d_forward, ConvGrads, ConvParams, Padding};
pub use dense::{dense_backward, dense_forward, DenseGrads, DenseParams};
pub use loss::{rmse, softmax, softmax_cross_entropy, softmax_cross_entropy_dense, LossKind};
pub use model::{count_arch_params, count_params, Architecture, InputSpec, LayerSpec, ModelSpec, ParamReport, ParamRow, Shape};
pub use network::{Gradients, LayerParams, Network, Tape, TapeNode};
pub use optim::{adam_step, lr_schedule, AdamConfig, AdamState};
