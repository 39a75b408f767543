//! Dual-domain change detection for co-registered bi-temporal imagery.
//!
//! A Siamese residual encoder extracts four feature scales from each image,
//! DCT-based channel gates re-weight every scale in the frequency domain,
//! and a cascade of spatial recovery blocks injects the deepest change
//! representation into the shallower scales before a light decoder emits
//! two-class change logits.
//!
//! The numeric core is generic over [`Scalar`] (`f32` for training, `f64`
//! for finite-difference verification); the aliases below fix the common
//! choices.

// `!(x > 0.0)` is how validators reject NaN along with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod autograd;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod loss;
pub mod mask;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod predict;
pub mod render;
pub mod scalar;
pub mod spectral;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use scalar::Scalar;
pub use tensor::Tensor;

pub use mask::BinaryMask;
pub use model::{ModelConfig, Network};

pub type Tensor32 = Tensor<f32>;
pub type Tensor64 = Tensor<f64>;
pub type Network32 = Network<f32>;
pub type Network64 = Network<f64>;
pub type Model32 = train::Model<f32>;
pub type Checkpoint32 = train::Checkpoint<f32>;
