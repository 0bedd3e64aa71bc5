//! Low-dose CT denoising with graph-based non-local and context feature
//! aggregation.
//!
//! The crate is organized around a small define-by-run autodiff engine
//! ([`autodiff`]), per-pixel similarity graphs with edge-conditioned
//! aggregation ([`graph`]), the stacked denoising generator ([`model`]),
//! a WGAN-GP training harness ([`train`]), a synthetic CT data pipeline
//! ([`data`]) and image-quality metrics ([`metrics`]).
//!
//! All numeric code is generic over the scalar type via [`Scalar`]:
//! double precision for test oracles, single precision for training.

pub mod audit;
pub mod autodiff;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod graph;
pub mod metrics;
pub mod model;
pub mod params;
pub mod pipeline;
pub mod rng;
pub mod scalar;
pub mod sweep;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use scalar::Scalar;
pub use tensor::Tensor;

/// Single-precision tensor, the training default.
pub type Tensor32 = Tensor<f32>;
/// Double-precision tensor, used by the test oracles.
pub type Tensor64 = Tensor<f64>;
/// Single-precision tape.
pub type Tape32 = autodiff::Tape<f32>;
/// Double-precision tape.
pub type Tape64 = autodiff::Tape<f64>;
