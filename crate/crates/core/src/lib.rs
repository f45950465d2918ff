//! Two-stage low-light image enhancement engine.
//!
//! Stage one brightens the image by learned division of its Fourier
//! amplitude; stage two denoises with an encoder/decoder that fuses a
//! spatial and a frequency branch under SNR-map guidance. A minimal
//! reverse-mode tape makes the whole pipeline trainable on CPU.

pub mod denoiser;
pub mod error;
pub mod fft;
pub mod fie;
pub mod gradcheck;
pub mod model;
pub mod ops;
pub mod snr;
pub mod tape;
pub mod tensor;
pub mod weights;

pub use error::{Error, Result};
pub use model::{EnhanceResult, ModelConfig, SkipMode};
pub use tensor::Tensor;
pub use weights::WeightStore;
