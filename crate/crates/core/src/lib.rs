//! Wavelet-based two-branch GAN dehazing at desk scale.
//!
//! The crate bundles a double-precision tensor engine with reverse-mode
//! differentiation ([`tensor`]), Haar wavelet layers ([`wavelet`]), an
//! atmospheric-scattering haze synthesizer ([`hazesim`]), image-quality
//! metrics ([`metrics`]), training losses ([`losses`]), the generator and
//! patch discriminator ([`model`]), the GAN training loop and ablation
//! harness ([`train`]), and pixmap I/O plus gamma matching ([`imageio`],
//! [`gamma`]). The `dwgan` binary exposes all of it from the command line.
//!
//! Numeric code is generic over [`Scalar`] (`f32` or `f64`). The aliases at
//! the crate root fix the scalar to `f64`, which is what training and the
//! gradient checks use.

pub mod cli;
pub mod error;
pub mod gamma;
pub mod hazesim;
pub mod imageio;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod train;
pub mod scalar;
pub mod tensor;
pub mod wavelet;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Tensor = tensor::Tensor<f64>;
pub type Var = tensor::Var<f64>;
pub type Tensor32 = tensor::Tensor<f32>;
pub type Var32 = tensor::Var<f32>;
