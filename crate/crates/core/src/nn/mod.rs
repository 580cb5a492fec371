//! Minimal dense neural-network engine: embeddings, fully connected layers,
//! batch normalization, leaky ReLU, explicit backpropagation and Adam.

pub mod activation;
mod adam;
pub mod batch_norm;
mod dense;
mod embedding;
mod gradcheck;
mod mlp;
mod params;

pub use adam::{AdamConfig, AdamState};
pub use batch_norm::{batch_norm_backward, batch_norm_forward, Affine, Moments, NormConfig};
pub use dense::{affine, affine_backward, DenseParams};
pub use embedding::EmbeddingParams;
pub use gradcheck::finite_difference_gradients;
pub use mlp::{Mlp, MlpCache, MlpConfig, MlpOutput, MlpParams};
pub use params::{max_relative_error, ParamStore, StopGrad};
