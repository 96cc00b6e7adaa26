//! Small trainable function approximators: parameter storage, a rectifier
//! MLP with manual backprop, a step-embedding table and the Adam optimizer.

mod adam;
mod mlp;
mod params;

pub use adam::{adam_step, AdamConfig};
pub use mlp::{
    max_relative_error, numerical_gradient, sigmoid, softplus, Embedding, Mlp, MlpCache, MlpSpec,
    OutputHead,
};
pub use params::{Param, ParamId, ParameterStore};
