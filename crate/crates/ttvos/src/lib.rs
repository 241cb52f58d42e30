//! Template-based semi-supervised video object segmentation, desk scale.
//!
//! The numeric core (tensors, autodiff, layers) is generic over the
//! scalar type via [`scalar::Scalar`]; the shipped pipeline runs in
//! `f64`, see the aliases at the bottom of this module.

pub mod autodiff;
pub mod error;
pub mod ops;
pub mod scalar;
pub mod tensor;

pub use error::{Error, Result};

/// Concrete instantiations used by the tools and the CLI.
pub type Tensor64 = tensor::Tensor<f64>;
pub type Tape64 = autodiff::Tape<f64>;
pub type Parameter64 = autodiff::Parameter<f64>;
