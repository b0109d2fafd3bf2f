//! Audio-visual speech enhancement with a conditional least-squares GAN.
//!
//! The crate is organized around a small reverse-mode autodiff engine
//! ([`tensor`]) on which the enhancement network ([`net`]) is built, a
//! spectrogram front-end ([`dsp`]), a fully synthetic audio-visual corpus
//! ([`corpus`]), the adversarial training loop ([`train`]) and objective
//! quality metrics ([`metrics`]).
//!
//! All numeric code is generic over the scalar type via [`Scalar`]
//! (`f32` for training speed, `f64` for gradient verification); concrete
//! aliases live at the crate root.

pub mod corpus;
pub mod dsp;
pub mod error;
pub mod metrics;
pub mod net;
pub mod scalar;
pub mod tensor;
pub mod train;
pub mod verify;

pub use error::{Error, Result};
pub use scalar::{DType, Scalar};

/// Training-precision tensor.
pub type Tensor32 = tensor::Tensor<f32>;
/// Verification-precision tensor.
pub type Tensor64 = tensor::Tensor<f64>;
/// Training-precision autodiff tape.
pub type Tape32 = tensor::Tape<f32>;
/// Verification-precision autodiff tape.
pub type Tape64 = tensor::Tape<f64>;
/// Training-precision waveform.
pub type Waveform32 = dsp::Waveform<f32>;
/// Verification-precision waveform.
pub type Waveform64 = dsp::Waveform<f64>;
