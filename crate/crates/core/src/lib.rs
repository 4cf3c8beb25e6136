//! Spectral-domain audio super-resolution.
//!
//! A low-rate waveform is analysed with a shortened STFT, mapped by a
//! frequency-axis convolutional U-Net operating on real/imaginary channels,
//! and synthesised with a full-length inverse STFT at the target rate. The
//! crate also carries the training objectives, the trainer, evaluation
//! metrics and listening-test export helpers.
//!
//! Signal-level code is generic over the sample type (see [`dsp::Sample`]);
//! the network runs on `candle` tensors whose dtype is chosen at build time.

pub use aero_dsp as dsp;

pub mod config;
pub mod data;
pub mod discriminator;
pub mod error;
pub mod eval;
pub mod losses;
pub mod model;
pub mod mushra;
pub mod nn;
pub mod params;
pub mod pipeline;
pub mod spectral;
pub mod trainer;

pub use config::AeroConfig;
pub use error::{AeroError, Result};
pub use model::{AeroModel, ModelConfig};
pub use params::ParameterSet;
pub use pipeline::{super_resolve, Upsampler};

pub use aero_dsp::{Wave, Wave64};
