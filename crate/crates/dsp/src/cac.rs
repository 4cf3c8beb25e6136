//! Complex-as-channels packing: real and imaginary parts as two real planes.

use num_complex::Complex;

use crate::error::{DspError, Result};
use crate::scalar::Sample;
use crate::stft::ComplexSpectrogram;

/// Real grid `channels × bins × frames`, channel-major.
#[derive(Debug, Clone, PartialEq)]
pub struct CacArray<T> {
    channels: usize,
    bins: usize,
    frames: usize,
    values: Vec<T>,
}

impl<T: Sample> CacArray<T> {
    pub fn new(channels: usize, bins: usize, frames: usize, values: Vec<T>) -> Result<Self> {
        if values.len() != channels * bins * frames {
            return Err(DspError::Shape(format!(
                "{} values for a {channels}x{bins}x{frames} grid",
                values.len()
            )));
        }
        Ok(Self {
            channels,
            bins,
            frames,
            values,
        })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.channels, self.bins, self.frames)
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn into_values(self) -> Vec<T> {
        self.values
    }

    pub fn get(&self, channel: usize, bin: usize, frame: usize) -> T {
        self.values[(channel * self.bins + bin) * self.frames + frame]
    }

    /// Back to a complex grid. With `drop_nyquist` a zero Nyquist row is
    /// appended so the result has `bins + 1` rows.
    pub fn to_complex(&self, drop_nyquist: bool, source_rate: u32) -> Result<ComplexSpectrogram<T>> {
        if self.channels != 2 {
            return Err(DspError::Shape(format!(
                "complex conversion needs 2 channels, got {}",
                self.channels
            )));
        }
        let out_bins = self.bins + usize::from(drop_nyquist);
        let plane = self.bins * self.frames;
        let mut values = Vec::with_capacity(out_bins * self.frames);
        for i in 0..plane {
            values.push(Complex::new(self.values[i], self.values[plane + i]));
        }
        values.resize(out_bins * self.frames, Complex::new(T::zero(), T::zero()));
        ComplexSpectrogram::new(out_bins, self.frames, values, source_rate)
    }
}

/// Packs a spectrogram into two channels, optionally dropping the top
/// (Nyquist) row so the frequency axis is `fft_size / 2` long.
pub fn to_cac<T: Sample>(spec: &ComplexSpectrogram<T>, drop_nyquist: bool) -> CacArray<T> {
    let bins = if drop_nyquist { spec.bins() - 1 } else { spec.bins() };
    let frames = spec.frames();
    let plane = bins * frames;
    let mut values = vec![T::zero(); 2 * plane];
    for (i, c) in spec.values()[..plane].iter().enumerate() {
        values[i] = c.re;
        values[plane + i] = c.im;
    }
    CacArray {
        channels: 2,
        bins,
        frames,
        values,
    }
}
