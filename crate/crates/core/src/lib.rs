//! Delayed-feedback continuous training and multi-domain CTR components.
//!
//! The numeric core (networks, losses, metrics) is generic over [`Scalar`];
//! `f64` is used for gradient checks and simulation oracles, `f32` for bulk
//! streaming training. Concrete aliases for both live at the crate root.

pub mod harness;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod star;
pub mod stream;

mod error;
mod scalar;
pub mod snapshot;

pub use error::{Error, Result};
pub use scalar::{clamp_prob, sigmoid, Scalar, PROB_EPS};

pub type Mlp32 = nn::Mlp<f32>;
pub type Mlp64 = nn::Mlp<f64>;
pub type DnnModel32 = model::DnnModel<f32>;
pub type DnnModel64 = model::DnnModel<f64>;
pub type StarModel32 = star::StarModel<f32>;
pub type StarModel64 = star::StarModel<f64>;
