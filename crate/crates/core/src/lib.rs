//! Time-gated convolutional network (TGCNN) for binary multivariate time-series
//! classification, built on a small dense-tensor and reverse-mode autodiff core.
//!
//! The numeric stack (tensors, autodiff, layers, model, optimisers) is generic over
//! [`Scalar`] (`f32` or `f64`); the aliases below fix it to `f64`, which is what the
//! data pipeline, persistence and command-line tools use.

pub mod autodiff;
pub mod error;
pub mod features;
pub mod io;
pub mod model;
pub mod nn;
pub mod ops;
pub mod rng;
pub mod scalar;
pub mod tensor;
pub mod train;
pub mod verify;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Tensor = tensor::Tensor<f64>;
pub type Tensor32 = tensor::Tensor<f32>;
pub type Graph = autodiff::Graph<f64>;
pub type Model = model::TgcnnModel<f64>;
pub type Model32 = model::TgcnnModel<f32>;

pub use model::{BranchMode, TgcnnConfig};
