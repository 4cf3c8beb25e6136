use crate::error::{DspError, Result};
use crate::scalar::Sample;

/// Mono time-domain audio with its sample rate.
#[derive(Debug, Clone, PartialEq)]
pub struct WaveSignal<T> {
    samples: Vec<T>,
    sample_rate: u32,
}

impl<T: Sample> WaveSignal<T> {
    /// Validating constructor: non-empty, finite samples, positive rate.
    pub fn new(samples: Vec<T>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(DspError::InvalidSignal("sample rate must be positive".into()));
        }
        if samples.is_empty() {
            return Err(DspError::InvalidSignal("signal must hold at least one sample".into()));
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(DspError::InvalidSignal(format!("non-finite sample at index {i}")));
        }
        Ok(Self { samples, sample_rate })
    }

    pub fn zeros(len: usize, sample_rate: u32) -> Result<Self> {
        Self::new(vec![T::zero(); len], sample_rate)
    }

    /// `amplitude · sin(2π·freq·n/rate + phase)`.
    pub fn sine(freq: f64, amplitude: f64, phase: f64, len: usize, sample_rate: u32) -> Result<Self> {
        let w = 2.0 * std::f64::consts::PI * freq / sample_rate as f64;
        let samples = (0..len)
            .map(|n| T::lit(amplitude * (w * n as f64 + phase).sin()))
            .collect();
        Self::new(samples, sample_rate)
    }

    pub fn samples(&self) -> &[T] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<T> {
        self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub fn energy(&self) -> T {
        self.samples.iter().map(|&s| s * s).sum()
    }

    /// Copy of `[start, start + len)`, clamped to the signal end.
    pub fn slice(&self, start: usize, len: usize) -> Result<Self> {
        if start >= self.samples.len() {
            return Err(DspError::InvalidArgument(format!(
                "slice start {start} beyond signal length {}",
                self.samples.len()
            )));
        }
        let end = (start + len).min(self.samples.len());
        Self::new(self.samples[start..end].to_vec(), self.sample_rate)
    }

    /// Keeps the first `len` samples, or zero-pads up to `len`.
    pub fn fit_to_len(&self, len: usize) -> Result<Self> {
        let mut s = self.samples.clone();
        s.resize(len, T::zero());
        Self::new(s, self.sample_rate)
    }

    pub fn scaled(&self, gain: T) -> Self {
        Self {
            samples: self.samples.iter().map(|&s| s * gain).collect(),
            sample_rate: self.sample_rate,
        }
    }

    pub fn cast<U: Sample>(&self) -> WaveSignal<U> {
        WaveSignal {
            samples: self
                .samples
                .iter()
                .map(|s| U::lit(s.to_f64_lossy()))
                .collect(),
            sample_rate: self.sample_rate,
        }
    }
}

/// Index into `[0, len)` after mirror reflection about the end samples
/// (edge samples are not repeated), extended periodically for arbitrary offsets.
pub(crate) fn reflect_index(i: isize, len: usize) -> usize {
    if len == 1 {
        return 0;
    }
    let period = 2 * (len as isize - 1);
    let m = i.rem_euclid(period);
    if m < len as isize {
        m as usize
    } else {
        (period - m) as usize
    }
}
