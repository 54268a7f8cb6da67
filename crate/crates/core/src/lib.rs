//! Randomized Lipschitz-constrained hybrid convolutional networks.
//!
//! The numeric core is generic over [`Real`] (`f32` or `f64`). The aliases at the crate
//! root fix the scalar to `f64`, which is what training, certification and the command line
//! use; [`single`] carries the same aliases for `f32`.

pub mod attacks;
pub mod audit;
pub mod block;
pub mod certify;
pub mod data;
pub mod error;
pub mod io;
pub mod model;
pub mod rng;
pub mod scalar;
pub mod spectral;
pub mod streams;
pub mod tensor;
pub mod train;

pub use error::{HycasError, Result};
pub use scalar::Real;
pub use tensor::Padding;

pub type Tensor = tensor::Tensor<f64>;
pub type Graph = tensor::Graph<f64>;
pub type KernelSpec = spectral::KernelSpec<f64>;

/// Single-precision aliases.
pub mod single {
    pub type Tensor = crate::tensor::Tensor<f32>;
    pub type Graph = crate::tensor::Graph<f32>;
    pub type KernelSpec = crate::spectral::KernelSpec<f32>;
}
