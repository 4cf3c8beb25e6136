//! Paired analysis/synthesis STFT configurations for spectral upsampling.
//!
//! The analysis side runs at the low rate with window and hop divided by the
//! scale factor; the synthesis side runs at the high rate with the full window
//! and hop. Both share one FFT size, so the spectrogram handed to the network
//! has the same shape on either side, and the synthesis frames land on a time
//! axis stretched by the scale factor. Bin `k` therefore maps from
//! `k·sr/f` Hz at the input to `k·s·sr/f` Hz at the output.

use std::fmt;
use std::str::FromStr;

use num_rational::Ratio;
use serde::{Deserialize, Serialize};

use crate::error::{DspError, Result};
use crate::scalar::Sample;
use crate::signal::WaveSignal;
use crate::stft::{istft_at_rate, stft, ComplexSpectrogram, StftConfig, WindowKind};

/// Hop-to-window ratio of a spectral transform, restricted to 1/2, 1/4, 1/8.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct OverlapRatio(Ratio<usize>);

impl OverlapRatio {
    pub const HALF: Self = Self(Ratio::new_raw(1, 2));
    pub const QUARTER: Self = Self(Ratio::new_raw(1, 4));
    pub const EIGHTH: Self = Self(Ratio::new_raw(1, 8));
    pub const ALL: [Self; 3] = [Self::HALF, Self::QUARTER, Self::EIGHTH];

    pub fn new(numer: usize, denom: usize) -> Result<Self> {
        if denom == 0 {
            return Err(DspError::InvalidArgument("overlap ratio denominator is zero".into()));
        }
        let r = Ratio::new(numer, denom);
        Self::ALL
            .iter()
            .copied()
            .find(|c| c.0 == r)
            .ok_or_else(|| DspError::InvalidArgument(format!("overlap ratio {r} not in {{1/2, 1/4, 1/8}}")))
    }

    pub fn ratio(&self) -> Ratio<usize> {
        self.0
    }

    pub fn as_f64(&self) -> f64 {
        *self.0.numer() as f64 / *self.0.denom() as f64
    }

    /// `round(self · value / divisor)`, computed exactly.
    fn round_scaled(&self, value: usize, divisor: usize) -> usize {
        (self.0 * Ratio::new(value, divisor)).round().to_integer()
    }
}

impl fmt::Display for OverlapRatio {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.0.numer(), self.0.denom())
    }
}

impl FromStr for OverlapRatio {
    type Err = DspError;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || DspError::InvalidArgument(format!("cannot parse overlap ratio {s:?}; expected e.g. \"1/4\""));
        let (n, d) = s.trim().split_once('/').ok_or_else(bad)?;
        let n = n.trim().parse().map_err(|_| bad())?;
        let d = d.trim().parse().map_err(|_| bad())?;
        Self::new(n, d)
    }
}

impl TryFrom<String> for OverlapRatio {
    type Error = DspError;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<OverlapRatio> for String {
    fn from(r: OverlapRatio) -> String {
        r.to_string()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SpectroTransformSpec {
    pub scale: usize,
    pub fft_size: usize,
    pub overlap_ratio: OverlapRatio,
    pub analysis: StftConfig,
    pub synthesis: StftConfig,
}

/// Builds the analysis/synthesis pair for upsampling by `scale`.
///
/// Synthesis: window `f`, hop `round(r·f)`. Analysis: window `f/s` rounded
/// down to an even length, hop `round(r·f/s)`, FFT size still `f`.
pub fn make_transform_pair(scale: usize, fft_size: usize, overlap_ratio: OverlapRatio) -> Result<SpectroTransformSpec> {
    if scale < 1 {
        return Err(DspError::InvalidArgument("scale must be at least 1".into()));
    }
    if fft_size < 2 || fft_size % 2 != 0 {
        return Err(DspError::InvalidArgument(format!("fft size {fft_size} must be even and >= 2")));
    }
    let synthesis = StftConfig::hann(fft_size, fft_size, overlap_ratio.round_scaled(fft_size, 1).max(1))?;
    let win = (fft_size / scale) & !1;
    if win < 2 {
        return Err(DspError::InvalidArgument(format!(
            "analysis window {fft_size}/{scale} rounds below 2 samples"
        )));
    }
    let hop = overlap_ratio.round_scaled(fft_size, scale).clamp(1, win);
    let analysis = StftConfig::new(fft_size, win, hop, WindowKind::Hann, true)?;
    Ok(SpectroTransformSpec {
        scale,
        fft_size,
        overlap_ratio,
        analysis,
        synthesis,
    })
}

impl SpectroTransformSpec {
    pub fn bins(&self) -> usize {
        self.fft_size / 2 + 1
    }

    pub fn output_len(&self, input_len: usize) -> usize {
        self.scale * input_len
    }

    pub fn analysis_frames(&self, input_len: usize) -> usize {
        self.analysis.num_frames(input_len)
    }

    pub fn synthesis_frames(&self, input_len: usize) -> usize {
        self.synthesis.num_frames(self.output_len(input_len))
    }

    /// Low-rate waveform to the fixed-size intermediate spectrogram.
    pub fn analyze<T: Sample>(&self, x: &WaveSignal<T>) -> Result<ComplexSpectrogram<T>> {
        stft(x, &self.analysis)
    }

    /// Intermediate spectrogram to a waveform of `s · input_len` samples at
    /// `s` times the spectrogram's source rate. When the two frame counts
    /// differ (scale not dividing the FFT size) extra frames are dropped and
    /// missing ones are zero-filled.
    pub fn synthesize<T: Sample>(&self, spec: &ComplexSpectrogram<T>, input_len: usize) -> Result<WaveSignal<T>> {
        let out_len = self.output_len(input_len);
        let frames = self.synthesis_frames(input_len);
        let rate = spec
            .source_rate()
            .checked_mul(self.scale as u32)
            .ok_or_else(|| DspError::InvalidArgument("output sample rate overflows".into()))?;
        let spec = if spec.frames() == frames {
            std::borrow::Cow::Borrowed(spec)
        } else {
            std::borrow::Cow::Owned(spec.with_frames(frames))
        };
        istft_at_rate(&spec, &self.synthesis, out_len, rate)
    }
}
