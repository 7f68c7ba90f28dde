//! Minimal differentiable-computation substrate: a fixed set of layers with
//! exact backward passes, binary cross-entropy, and Adam.

pub mod adam;
pub mod layers;
pub mod loss;
pub mod params;
pub mod tensor;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use layers::{
    forward_cached, layer_backward, layer_forward, sigmoid, softplus, softplus_inverse,
    Activation, ForwardRecord, LayerCache, LayerKind, Sequential, Tape,
};
pub use loss::{cross_entropy, cross_entropy_grad, PROB_CLAMP};
pub use params::{ParamBlock, ParamSpec};
pub use tensor::Tensor;
