//! Rational-ratio polyphase resampling with a Kaiser-windowed sinc kernel.

use num_integer::Integer;

use crate::error::{DspError, Result};
use crate::scalar::Sample;
use crate::signal::{reflect_index, WaveSignal};
use crate::window::{kaiser_at, sinc};

/// Sinc zero crossings on each side of the kernel center at the lower of
/// the two rates; 64 taps per phase when the cutoff sits at the input Nyquist.
pub const ZERO_CROSSINGS: usize = 32;
/// Cutoff as a fraction of the lower Nyquist frequency.
pub const ROLLOFF: f64 = 0.96;
pub const KAISER_BETA: f64 = 7.0;

/// Precomputed polyphase filter bank for one `(source, target)` rate pair.
#[derive(Debug, Clone)]
pub struct SincResampler<T> {
    source_rate: u32,
    target_rate: u32,
    up: usize,
    down: usize,
    half_width: usize,
    // phases[p][k] weights input sample i0 - half_width + 1 + k
    phases: Vec<Vec<T>>,
}

impl<T: Sample> SincResampler<T> {
    pub fn new(source_rate: u32, target_rate: u32) -> Result<Self> {
        if source_rate == 0 || target_rate == 0 {
            return Err(DspError::InvalidArgument("sample rates must be positive".into()));
        }
        let g = source_rate.gcd(&target_rate);
        let up = (target_rate / g) as usize;
        let down = (source_rate / g) as usize;
        // cutoff relative to the input Nyquist
        let cutoff = (up as f64 / down as f64).min(1.0) * ROLLOFF;
        let half_width = (ZERO_CROSSINGS as f64 / cutoff).ceil() as usize;
        let taps = 2 * half_width;
        let phases = (0..up)
            .map(|p| {
                let frac = p as f64 / up as f64;
                let raw: Vec<f64> = (0..taps)
                    .map(|k| {
                        let t = (k as f64 - half_width as f64 + 1.0) - frac;
                        cutoff * sinc(cutoff * t) * kaiser_at(t / half_width as f64, KAISER_BETA)
                    })
                    .collect();
                let sum: f64 = raw.iter().sum();
                raw.into_iter().map(|h| T::lit(h / sum)).collect()
            })
            .collect();
        Ok(Self {
            source_rate,
            target_rate,
            up,
            down,
            half_width,
            phases,
        })
    }

    pub fn taps_per_phase(&self) -> usize {
        2 * self.half_width
    }

    /// `round(len · target / source)`.
    pub fn output_len(&self, input_len: usize) -> usize {
        ((input_len * self.up) as f64 / self.down as f64).round() as usize
    }

    pub fn process(&self, x: &WaveSignal<T>) -> Result<WaveSignal<T>> {
        if x.sample_rate() != self.source_rate {
            return Err(DspError::InvalidArgument(format!(
                "resampler built for {} Hz, signal is {} Hz",
                self.source_rate,
                x.sample_rate()
            )));
        }
        let xs = x.samples();
        let len = xs.len();
        let out_len = self.output_len(len).max(1);
        let mut out = Vec::with_capacity(out_len);
        for j in 0..out_len {
            let pos = j * self.down;
            let i0 = (pos / self.up) as isize;
            let phase = &self.phases[pos % self.up];
            let first = i0 - self.half_width as isize + 1;
            let interior = first >= 0 && (first as usize + phase.len()) <= len;
            let acc = if interior {
                let seg = &xs[first as usize..first as usize + phase.len()];
                seg.iter().zip(phase).fold(T::zero(), |a, (&s, &h)| a + s * h)
            } else {
                phase.iter().enumerate().fold(T::zero(), |a, (k, &h)| {
                    a + xs[reflect_index(first + k as isize, len)] * h
                })
            };
            out.push(acc);
        }
        WaveSignal::new(out, self.target_rate)
    }
}

/// Windowed-sinc resampling to `target_rate`. Identity when rates match.
pub fn sinc_resample<T: Sample>(x: &WaveSignal<T>, target_rate: u32) -> Result<WaveSignal<T>> {
    if target_rate == 0 {
        return Err(DspError::InvalidArgument("target rate must be positive".into()));
    }
    if target_rate == x.sample_rate() {
        return Ok(x.clone());
    }
    SincResampler::new(x.sample_rate(), target_rate)?.process(x)
}
