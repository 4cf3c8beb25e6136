use std::fmt;

use num_complex::Complex;
use realfft::RealFftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{DspError, Result};
use crate::scalar::Sample;
use crate::signal::{reflect_index, WaveSignal};
use crate::window;

/// Smallest window-square sum tolerated by [`istft`].
pub const COLA_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WindowKind {
    Hann,
    Rect,
}

/// Frame geometry of one STFT. Windows shorter than `fft_size` are
/// zero-padded symmetrically to the FFT length.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct StftConfig {
    pub fft_size: usize,
    pub win_length: usize,
    pub hop_length: usize,
    pub window: WindowKind,
    pub centered: bool,
}

impl fmt::Display for StftConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "fft {} / win {} / hop {} ({:?}{})",
            self.fft_size,
            self.win_length,
            self.hop_length,
            self.window,
            if self.centered { ", centered" } else { "" }
        )
    }
}

impl StftConfig {
    pub fn new(
        fft_size: usize,
        win_length: usize,
        hop_length: usize,
        window: WindowKind,
        centered: bool,
    ) -> Result<Self> {
        let cfg = Self {
            fft_size,
            win_length,
            hop_length,
            window,
            centered,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Centered Hann configuration.
    pub fn hann(fft_size: usize, win_length: usize, hop_length: usize) -> Result<Self> {
        Self::new(fft_size, win_length, hop_length, WindowKind::Hann, true)
    }

    pub fn validate(&self) -> Result<()> {
        if self.hop_length < 1 || self.hop_length > self.win_length || self.win_length > self.fft_size {
            return Err(DspError::InvalidConfig(format!(
                "{self}: need 1 <= hop <= win <= fft"
            )));
        }
        if self.fft_size % 2 != 0 {
            return Err(DspError::InvalidConfig(format!("{self}: fft size must be even")));
        }
        Ok(())
    }

    pub fn bins(&self) -> usize {
        self.fft_size / 2 + 1
    }

    /// Offset of the window inside the FFT buffer.
    pub fn window_offset(&self) -> usize {
        (self.fft_size - self.win_length) / 2
    }

    /// Signal index of buffer position 0 in frame 0.
    pub fn frame_origin(&self) -> isize {
        if self.centered {
            -((self.fft_size / 2) as isize)
        } else {
            -(self.window_offset() as isize)
        }
    }

    /// Analysis window zero-padded to `fft_size`.
    pub fn padded_window<T: Sample>(&self) -> Vec<T> {
        let core = match self.window {
            WindowKind::Hann => window::hann::<T>(self.win_length),
            WindowKind::Rect => window::rect::<T>(self.win_length),
        };
        let mut w = vec![T::zero(); self.fft_size];
        let off = self.window_offset();
        w[off..off + self.win_length].copy_from_slice(&core);
        w
    }

    /// Frame count produced by [`stft`] for a signal of `len` samples.
    pub fn num_frames(&self, len: usize) -> usize {
        if self.centered {
            len / self.hop_length + 1
        } else if len >= self.win_length {
            (len - self.win_length) / self.hop_length + 1
        } else {
            0
        }
    }
}

/// Complex time-frequency grid, stored bin-major (`bins × frames`).
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexSpectrogram<T> {
    bins: usize,
    frames: usize,
    values: Vec<Complex<T>>,
    source_rate: u32,
}

impl<T: Sample> ComplexSpectrogram<T> {
    pub fn new(bins: usize, frames: usize, values: Vec<Complex<T>>, source_rate: u32) -> Result<Self> {
        if values.len() != bins * frames {
            return Err(DspError::Shape(format!(
                "{} values for a {bins}x{frames} spectrogram",
                values.len()
            )));
        }
        if values.iter().any(|c| !c.re.is_finite() || !c.im.is_finite()) {
            return Err(DspError::InvalidSignal("non-finite spectrogram value".into()));
        }
        Ok(Self {
            bins,
            frames,
            values,
            source_rate,
        })
    }

    pub fn zeros(bins: usize, frames: usize, source_rate: u32) -> Self {
        Self {
            bins,
            frames,
            values: vec![Complex::new(T::zero(), T::zero()); bins * frames],
            source_rate,
        }
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn source_rate(&self) -> u32 {
        self.source_rate
    }

    pub fn values(&self) -> &[Complex<T>] {
        &self.values
    }

    pub fn get(&self, bin: usize, frame: usize) -> Complex<T> {
        self.values[bin * self.frames + frame]
    }

    pub fn set(&mut self, bin: usize, frame: usize, v: Complex<T>) {
        self.values[bin * self.frames + frame] = v;
    }

    /// `|X|` per cell, bin-major.
    pub fn magnitudes(&self) -> Vec<T> {
        self.values.iter().map(|c| c.norm()).collect()
    }

    /// Truncates trailing frames or appends zero frames.
    pub fn with_frames(&self, frames: usize) -> Self {
        let mut out = Self::zeros(self.bins, frames, self.source_rate);
        let keep = frames.min(self.frames);
        for b in 0..self.bins {
            for n in 0..keep {
                out.set(b, n, self.get(b, n));
            }
        }
        out
    }

    pub fn with_source_rate(mut self, rate: u32) -> Self {
        self.source_rate = rate;
        self
    }
}

/// Short-time Fourier transform. Centered configurations reflect-pad by
/// `fft_size / 2` on both sides, giving `len / hop + 1` frames.
pub fn stft<T: Sample>(x: &WaveSignal<T>, cfg: &StftConfig) -> Result<ComplexSpectrogram<T>> {
    cfg.validate()?;
    let samples = x.samples();
    if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
        return Err(DspError::InvalidSignal(format!("non-finite sample at index {i}")));
    }
    if !cfg.centered && samples.len() < cfg.win_length {
        return Err(DspError::TooShort(format!(
            "{} samples shorter than window {} of uncentered {cfg}",
            samples.len(),
            cfg.win_length
        )));
    }
    let frames = cfg.num_frames(samples.len());
    let bins = cfg.bins();
    let win = cfg.padded_window::<T>();
    let off = cfg.window_offset();
    let origin = cfg.frame_origin();

    let mut planner = RealFftPlanner::<T>::new();
    let fft = planner.plan_fft_forward(cfg.fft_size);
    let mut buf = fft.make_input_vec();
    let mut spec = fft.make_output_vec();
    let mut values = vec![Complex::new(T::zero(), T::zero()); bins * frames];
    let len = samples.len();

    for n in 0..frames {
        buf.iter_mut().for_each(|v| *v = T::zero());
        let start = origin + (n * cfg.hop_length) as isize;
        for b in off..off + cfg.win_length {
            let idx = start + b as isize;
            let s = if idx >= 0 && (idx as usize) < len {
                samples[idx as usize]
            } else {
                samples[reflect_index(idx, len)]
            };
            buf[b] = s * win[b];
        }
        fft.process(&mut buf, &mut spec)
            .map_err(|e| DspError::InvalidArgument(format!("fft: {e}")))?;
        for (k, c) in spec.iter().enumerate() {
            values[k * frames + n] = *c;
        }
    }
    ComplexSpectrogram::new(bins, frames, values, x.sample_rate())
}

/// Squared-window overlap-add envelope over `[0, out_length)` for `frames`
/// frames, together with the span actually touched by any window.
pub fn window_envelope<T: Sample>(cfg: &StftConfig, frames: usize, out_length: usize) -> (Vec<T>, Vec<bool>) {
    let win = cfg.padded_window::<T>();
    let off = cfg.window_offset();
    let origin = cfg.frame_origin();
    let mut env = vec![T::zero(); out_length];
    let mut touched = vec![false; out_length];
    for n in 0..frames {
        let start = origin + (n * cfg.hop_length) as isize;
        for b in off..off + cfg.win_length {
            let idx = start + b as isize;
            if idx >= 0 && (idx as usize) < out_length {
                env[idx as usize] += win[b] * win[b];
                touched[idx as usize] = true;
            }
        }
    }
    (env, touched)
}

/// Inverse STFT by windowed overlap-add with squared-window normalization.
/// The result has exactly `out_length` samples at the spectrogram's rate;
/// samples no window reaches are zero.
pub fn istft<T: Sample>(
    spec: &ComplexSpectrogram<T>,
    cfg: &StftConfig,
    out_length: usize,
) -> Result<WaveSignal<T>> {
    istft_at_rate(spec, cfg, out_length, spec.source_rate())
}

pub(crate) fn istft_at_rate<T: Sample>(
    spec: &ComplexSpectrogram<T>,
    cfg: &StftConfig,
    out_length: usize,
    rate: u32,
) -> Result<WaveSignal<T>> {
    cfg.validate()?;
    if spec.bins() != cfg.bins() {
        return Err(DspError::Shape(format!(
            "spectrogram has {} bins, {cfg} expects {}",
            spec.bins(),
            cfg.bins()
        )));
    }
    if out_length == 0 {
        return Err(DspError::InvalidArgument("output length must be positive".into()));
    }
    let frames = spec.frames();
    let win = cfg.padded_window::<T>();
    let off = cfg.window_offset();
    let origin = cfg.frame_origin();
    let scale = T::one() / T::from_usize_lossy(cfg.fft_size);

    let mut planner = RealFftPlanner::<T>::new();
    let ifft = planner.plan_fft_inverse(cfg.fft_size);
    let mut cbuf = ifft.make_input_vec();
    let mut tbuf = ifft.make_output_vec();
    let mut out = vec![T::zero(); out_length];

    for n in 0..frames {
        for (k, c) in cbuf.iter_mut().enumerate() {
            *c = spec.get(k, n);
        }
        // c2r ignores these; realfft insists on them being zero
        cbuf[0].im = T::zero();
        let last = cbuf.len() - 1;
        cbuf[last].im = T::zero();
        ifft.process(&mut cbuf, &mut tbuf)
            .map_err(|e| DspError::InvalidArgument(format!("inverse fft: {e}")))?;
        let start = origin + (n * cfg.hop_length) as isize;
        for b in off..off + cfg.win_length {
            let idx = start + b as isize;
            if idx >= 0 && (idx as usize) < out_length {
                out[idx as usize] += tbuf[b] * scale * win[b];
            }
        }
    }

    let (env, touched) = window_envelope::<T>(cfg, frames, out_length);
    let floor = T::lit(COLA_FLOOR);
    for i in 0..out_length {
        if !touched[i] {
            continue;
        }
        if env[i] < floor {
            return Err(DspError::Cola {
                config: cfg.to_string(),
                index: i,
                value: env[i].to_f64_lossy(),
            });
        }
        out[i] /= env[i];
    }
    WaveSignal::new(out, rate)
}
