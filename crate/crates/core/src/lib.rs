//! Experiment harness comparing supervised, pseudo-label semi-supervised and
//! contrastive self-supervised learning for two-class image classification
//! under shrinking label budgets.
//!
//! The numeric core is generic over [`Scalar`] (`f32` and `f64`); training
//! runs in `f32` via the aliases below, while gradient checks can run the
//! identical code paths in `f64`.

pub mod autograd;
pub mod data;
pub mod error;
pub mod harness;
pub mod learn;
pub mod nn;
pub mod rng;
pub mod scalar;
pub mod stats;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Tensor = autograd::Tensor<f32>;
pub type Tensor64 = autograd::Tensor<f64>;
pub type Graph = autograd::Graph<f32>;
pub type Graph64 = autograd::Graph<f64>;
pub type Model = nn::Model<f32>;
