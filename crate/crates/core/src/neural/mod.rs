//! Differentiable walk classifier written directly against f64 buffers.

pub mod checkpoint;
mod linalg;
pub mod model;
pub mod params;
mod tensor;

pub use checkpoint::Checkpoint;
pub use model::{
    backward, backward_into, classify_head, cross_entropy_loss, forward, gru_forward,
    gru_layer_forward, point_embed, softmax, walk_features, walk_loss, Forward,
};
pub use params::{GruLayer, Head, ModelConfig, ModelParams, PointLayer};
pub use tensor::Tensor;

#[cfg(test)]
mod tests;
