//! Deterministic signal processing for spectral-domain audio super-resolution.
//!
//! Everything here is generic over the floating point sample type through
//! [`Sample`]; the aliases at the crate root pick `f32` for audio paths and
//! `f64` where numerical checks need the extra headroom.

pub mod cac;
pub mod error;
pub mod filter;
pub mod resample;
pub mod scalar;
pub mod signal;
pub mod stft;
pub mod transform;
pub mod wav;
pub mod window;

pub use cac::{to_cac, CacArray};
pub use error::{DspError, Result};
pub use filter::lowpass_filter;
pub use resample::{sinc_resample, SincResampler};
pub use scalar::Sample;
pub use signal::WaveSignal;
pub use stft::{istft, stft, ComplexSpectrogram, StftConfig, WindowKind};
pub use transform::{make_transform_pair, OverlapRatio, SpectroTransformSpec};
pub use wav::{read_wav, wav_info, write_wav, WavFormat, WavInfo};

pub type Wave = WaveSignal<f32>;
pub type Wave64 = WaveSignal<f64>;
pub type Spectrogram = ComplexSpectrogram<f32>;
pub type Spectrogram64 = ComplexSpectrogram<f64>;
pub type Cac = CacArray<f32>;
pub type Cac64 = CacArray<f64>;
