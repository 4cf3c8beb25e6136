//! Differentiable STFT and inverse STFT expressed as tensor ops.
//!
//! Both follow the framing of [`crate::dsp::stft`] exactly (centered,
//! reflect padding, windows zero-padded symmetrically inside the FFT buffer),
//! so their results agree with the FFT-based implementation to rounding.

use std::f64::consts::PI;

use candle_core::{DType, Device, Tensor};

use crate::dsp::stft::{window_envelope, COLA_FLOOR};
use crate::dsp::{DspError, StftConfig};
use crate::error::{AeroError, Result};

/// Forward transform of `(B, L)` signals.
#[derive(Debug, Clone)]
pub struct TensorStft {
    cfg: StftConfig,
    basis: Tensor,
}

impl TensorStft {
    pub fn new(cfg: StftConfig, dtype: DType, device: &Device) -> Result<Self> {
        cfg.validate()?;
        let bins = cfg.bins();
        let win = cfg.padded_window::<f64>();
        let off = cfg.window_offset();
        let n = cfg.fft_size as f64;
        let mut basis = vec![0.0f64; cfg.win_length * 2 * bins];
        for j in 0..cfg.win_length {
            let w = win[off + j];
            for k in 0..bins {
                let theta = 2.0 * PI * ((k * (off + j)) % cfg.fft_size) as f64 / n;
                basis[j * 2 * bins + k] = w * theta.cos();
                basis[j * 2 * bins + bins + k] = -w * theta.sin();
            }
        }
        let basis = Tensor::from_vec(basis, (cfg.win_length, 2 * bins), device)?.to_dtype(dtype)?;
        Ok(Self { cfg, basis })
    }

    pub fn config(&self) -> &StftConfig {
        &self.cfg
    }

    pub fn num_frames(&self, len: usize) -> usize {
        self.cfg.num_frames(len)
    }

    fn frame_indices(&self, len: usize, device: &Device) -> Result<Tensor> {
        let cfg = &self.cfg;
        let frames = cfg.num_frames(len);
        let start0 = cfg.frame_origin() + cfg.window_offset() as isize;
        let period = 2 * (len as isize - 1);
        let mut idx = Vec::with_capacity(frames * cfg.win_length);
        for f in 0..frames {
            let s = start0 + (f * cfg.hop_length) as isize;
            for j in 0..cfg.win_length {
                let mut i = (s + j as isize).rem_euclid(period);
                if i >= len as isize {
                    i = period - i;
                }
                idx.push(i as u32);
            }
        }
        Ok(Tensor::from_vec(idx, frames * cfg.win_length, device)?)
    }

    /// Real and imaginary parts, each `(B, frames, bins)`.
    pub fn forward(&self, x: &Tensor) -> Result<(Tensor, Tensor)> {
        let (b, len) = x.dims2()?;
        let need = if self.cfg.centered { self.cfg.fft_size / 2 + 1 } else { self.cfg.win_length };
        if len < need.max(2) {
            return Err(AeroError::Dsp(DspError::TooShort(format!(
                "{len} samples too short for {}",
                self.cfg
            ))));
        }
        let frames = self.cfg.num_frames(len);
        let idx = self.frame_indices(len, x.device())?;
        let framed = x.index_select(&idx, 1)?.reshape((b, frames, self.cfg.win_length))?;
        let spec = framed.broadcast_matmul(&self.basis)?;
        let bins = self.cfg.bins();
        Ok((spec.narrow(2, 0, bins)?, spec.narrow(2, bins, bins)?))
    }

    /// Power spectrum `(B, frames, bins)`.
    pub fn power(&self, x: &Tensor) -> Result<Tensor> {
        let (re, im) = self.forward(x)?;
        Ok(re.sqr()?.add(&im.sqr()?)?)
    }

    /// Magnitude with the power floored at `floor` before the square root,
    /// keeping gradients finite at silent bins.
    pub fn magnitude(&self, x: &Tensor, floor: f64) -> Result<Tensor> {
        Ok(self.power(x)?.clamp(floor, f64::INFINITY)?.sqrt()?)
    }
}

/// Inverse transform of `(B, 2, K, frames)` real/imaginary stacks, where `K`
/// may omit the Nyquist bin.
#[derive(Debug, Clone)]
pub struct TensorIstft {
    cfg: StftConfig,
    bins_in: usize,
    basis: Tensor,
}

impl TensorIstft {
    pub fn new(cfg: StftConfig, bins_in: usize, dtype: DType, device: &Device) -> Result<Self> {
        cfg.validate()?;
        if bins_in == 0 || bins_in > cfg.bins() {
            return Err(AeroError::Model(format!("{bins_in} input bins invalid for {cfg}")));
        }
        let win = cfg.padded_window::<f64>();
        let off = cfg.window_offset();
        let n = cfg.fft_size as f64;
        let nyq = cfg.fft_size / 2;
        let mut basis = vec![0.0f64; 2 * bins_in * cfg.win_length];
        for k in 0..bins_in {
            let c = if k == 0 || k == nyq { 1.0 } else { 2.0 } / n;
            for j in 0..cfg.win_length {
                let w = win[off + j];
                let theta = 2.0 * PI * ((k * (off + j)) % cfg.fft_size) as f64 / n;
                basis[k * cfg.win_length + j] = c * w * theta.cos();
                basis[(bins_in + k) * cfg.win_length + j] = -c * w * theta.sin();
            }
        }
        let basis = Tensor::from_vec(basis, (2 * bins_in, cfg.win_length), device)?.to_dtype(dtype)?;
        Ok(Self { cfg, bins_in, basis })
    }

    pub fn config(&self) -> &StftConfig {
        &self.cfg
    }

    /// `(B, 2, K, N) -> (B, out_len)`.
    pub fn forward(&self, spec: &Tensor, out_len: usize) -> Result<Tensor> {
        let (b, ch, k, n) = spec.dims4()?;
        if ch != 2 || k != self.bins_in {
            return Err(AeroError::Model(format!(
                "inverse transform expects (B, 2, {}, N), got {:?}",
                self.bins_in,
                spec.dims()
            )));
        }
        if out_len == 0 {
            return Err(AeroError::Model("output length must be positive".into()));
        }
        let cfg = &self.cfg;
        let (win, hop) = (cfg.win_length, cfg.hop_length);
        let frames = spec
            .permute((0, 3, 1, 2))?
            .reshape((b, n, 2 * k))?
            .broadcast_matmul(&self.basis)?;

        let m = win.div_ceil(hop);
        let frames = frames.pad_with_zeros(2, 0, m * hop - win)?.reshape((b, n, m, hop))?;
        let mut acc: Option<Tensor> = None;
        for c in 0..m {
            let part = frames.narrow(2, c, 1)?.squeeze(2)?.pad_with_zeros(1, c, m - 1 - c)?;
            acc = Some(match acc {
                None => part,
                Some(a) => a.add(&part)?,
            });
        }
        let total = (n + m - 1) * hop;
        let full = acc.expect("at least one chunk").reshape((b, total))?;

        let base = cfg.frame_origin() + cfg.window_offset() as isize;
        let aligned = if base <= 0 {
            let start = (-base) as usize;
            let avail = total.saturating_sub(start);
            if avail >= out_len {
                full.narrow(1, start, out_len)?
            } else if avail == 0 {
                Tensor::zeros((b, out_len), full.dtype(), full.device())?
            } else {
                full.narrow(1, start, avail)?.pad_with_zeros(1, 0, out_len - avail)?
            }
        } else {
            let padded = full.pad_with_zeros(1, base as usize, 0)?;
            let avail = padded.dim(1)?;
            if avail >= out_len {
                padded.narrow(1, 0, out_len)?
            } else {
                padded.pad_with_zeros(1, 0, out_len - avail)?
            }
        };

        let inv = self.inverse_envelope(n, out_len, spec.dtype(), spec.device())?;
        Ok(aligned.broadcast_mul(&inv)?)
    }

    fn inverse_envelope(&self, frames: usize, out_len: usize, dtype: DType, device: &Device) -> Result<Tensor> {
        let (env, touched) = window_envelope::<f64>(&self.cfg, frames, out_len);
        let mut inv = vec![0.0; out_len];
        for i in 0..out_len {
            if touched[i] {
                if env[i] < COLA_FLOOR {
                    return Err(AeroError::Dsp(DspError::Cola {
                        config: self.cfg.to_string(),
                        index: i,
                        value: env[i],
                    }));
                }
                inv[i] = 1.0 / env[i];
            }
        }
        Ok(Tensor::from_vec(inv, (1, out_len), device)?.to_dtype(dtype)?)
    }
}
