//! Self-supervised representation learning lab: four pretext tasks on a small
//! ResNet, linear probes on frozen features, and diagnostics that look at the
//! geometry of the learned representations.
//!
//! Numeric code is generic over [`Scalar`] (`f32` or `f64`); the aliases below
//! fix the precision used for training.

pub mod data;
pub mod diagnostics;
pub mod error;
pub mod evaluation;
pub mod models;
pub mod nn;
pub mod pretexts;
pub mod scalar;
pub mod seed;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use scalar::Scalar;
pub use tensor::Tensor;

pub type Tensor32 = Tensor<f32>;
pub type Tensor64 = Tensor<f64>;
pub type Backbone32 = models::Backbone<f32>;
pub type Decoder32 = models::Decoder<f32>;
pub type Head32 = models::Head<f32>;
