//! Linear-phase FIR low-pass used to build degraded listening-test anchors.

use crate::error::{DspError, Result};
use crate::scalar::Sample;
use crate::signal::{reflect_index, WaveSignal};
use crate::window::{kaiser_at, kaiser_beta, sinc};

const STOPBAND_DB: f64 = 65.0;
/// Transition band spans `[1 - w, 1 + w] · cutoff`.
const TRANSITION_HALF_WIDTH: f64 = 0.2;

/// Zero-phase Kaiser-windowed sinc low-pass. Transition band runs from 0.8 to
/// 1.2 times the cutoff.
pub fn lowpass_filter<T: Sample>(x: &WaveSignal<T>, cutoff_hz: f64) -> Result<WaveSignal<T>> {
    let rate = x.sample_rate() as f64;
    if !(cutoff_hz > 0.0 && cutoff_hz < rate / 2.0) {
        return Err(DspError::InvalidArgument(format!(
            "cutoff {cutoff_hz} Hz outside (0, {}) Hz",
            rate / 2.0
        )));
    }
    let taps = design(cutoff_hz / rate);
    let half = (taps.len() / 2) as isize;
    let xs = x.samples();
    let len = xs.len();
    let taps: Vec<T> = taps.into_iter().map(T::lit).collect();
    let out = (0..len)
        .map(|n| {
            taps.iter().enumerate().fold(T::zero(), |acc, (k, &h)| {
                let idx = n as isize + k as isize - half;
                let s = if idx >= 0 && (idx as usize) < len {
                    xs[idx as usize]
                } else {
                    xs[reflect_index(idx, len)]
                };
                acc + s * h
            })
        })
        .collect();
    WaveSignal::new(out, x.sample_rate())
}

/// Odd-length symmetric taps for a normalized cutoff (cycles/sample).
fn design(cutoff: f64) -> Vec<f64> {
    let transition = 2.0 * TRANSITION_HALF_WIDTH * cutoff;
    let n = ((STOPBAND_DB - 7.95) / (2.285 * 2.0 * std::f64::consts::PI * transition)).ceil() as usize + 1;
    let n = n | 1;
    let half = (n / 2) as f64;
    let beta = kaiser_beta(STOPBAND_DB);
    let raw: Vec<f64> = (0..n)
        .map(|i| {
            let t = i as f64 - half;
            2.0 * cutoff * sinc(2.0 * cutoff * t) * kaiser_at(t / half.max(1.0), beta)
        })
        .collect();
    let sum: f64 = raw.iter().sum();
    raw.into_iter().map(|h| h / sum).collect()
}
