//! CPU engine and experiment harness for conditional-GAN data augmentation
//! on MNIST: a tape-based autodiff tensor core, residual/convolutional GAN
//! models with a weight-masked discriminator, IS/FID evaluation, and the
//! training/ablation machinery on top.

pub mod error;
pub mod gradcheck;
pub mod ops;
pub mod optim;
pub mod params;
pub mod rng;
pub mod scalar;
pub mod tape;
pub mod tensor;

pub use error::{Error, Result};
pub use scalar::Scalar;
pub use tensor::Tensor;

/// Training-precision tensor.
pub type Tensor32 = Tensor<f32>;
/// Oracle-precision tensor.
pub type Tensor64 = Tensor<f64>;
pub type Tape32 = tape::Tape<f32>;
pub type Tape64 = tape::Tape<f64>;
