//! Deterministic Vision Transformer pipeline for four-class brain MRI
//! classification.
//!
//! The numeric core is generic over [`Scalar`] and instantiated at `f32`
//! for training and inference and at `f64` for gradient verification.
//! Aliases below name the common instantiations.

pub mod augment;
pub mod dataset;
pub mod error;
pub mod imaging;
pub mod inference;
pub mod metrics;
pub mod rng;
pub mod scalar;
pub mod synthetic;
pub mod tensor;
pub mod training;
pub mod vit;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Tensor32 = tensor::Tensor<f32>;
pub type Tensor64 = tensor::Tensor<f64>;
pub type Graph32 = tensor::graph::Graph<f32>;
pub type Graph64 = tensor::graph::Graph<f64>;
pub type ViTParams32 = vit::ViTParams<f32>;
pub type ViTParams64 = vit::ViTParams<f64>;
pub type Batch32 = dataset::Batch<f32>;
pub type Batch64 = dataset::Batch<f64>;
pub type TrainOutcome32 = training::TrainOutcome<f32>;
