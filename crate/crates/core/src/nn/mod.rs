//! Tensor kernels and a configurable residual CNN with exact forward and
//! backward passes. Everything is `f64`.

mod gemm;
pub mod model;
pub mod ops;
mod tensor;
pub mod weights;

pub use model::{
    accumulate, fifty_layer_template, model_backward, model_forward, residual_template, toy_template, Gradients, LayerParams,
    LayerSpec, Mode, ModelParams, ModelSpec, Trace,
};
pub use tensor::Tensor;
