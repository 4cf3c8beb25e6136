use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};
use log::warn;

use crate::error::{DspError, Result};
use crate::scalar::Sample;
use crate::signal::WaveSignal;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum WavFormat {
    #[default]
    Pcm16,
    Float32,
}

/// Header facts of a WAVE file.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WavInfo {
    pub sample_rate: u32,
    pub channels: u16,
    /// Samples per channel.
    pub frames: u32,
}

/// Parses only the header.
pub fn wav_info(path: impl AsRef<Path>) -> Result<WavInfo> {
    let reader = WavReader::open(path.as_ref())?;
    let spec = reader.spec();
    Ok(WavInfo {
        sample_rate: spec.sample_rate,
        channels: spec.channels,
        frames: reader.duration(),
    })
}

/// Reads a RIFF/WAVE file as mono. Multichannel audio is averaged down.
pub fn read_wav<T: Sample>(path: impl AsRef<Path>) -> Result<WaveSignal<T>> {
    let path = path.as_ref();
    let mut reader = WavReader::open(path)?;
    let spec = reader.spec();
    let channels = spec.channels as usize;
    if channels == 0 {
        return Err(DspError::InvalidSignal(format!("{}: zero channels", path.display())));
    }
    let interleaved: Vec<f32> = match spec.sample_format {
        SampleFormat::Float => reader.samples::<f32>().collect::<std::result::Result<_, _>>()?,
        SampleFormat::Int => {
            let full = (1i64 << (spec.bits_per_sample - 1)) as f32;
            reader
                .samples::<i32>()
                .map(|s| s.map(|v| v as f32 / full))
                .collect::<std::result::Result<_, _>>()?
        }
    };
    if channels > 1 {
        warn!("{}: downmixing {channels} channels to mono", path.display());
    }
    let mono: Vec<T> = interleaved
        .chunks(channels)
        .map(|frame| T::lit(frame.iter().map(|&v| v as f64).sum::<f64>() / channels as f64))
        .collect();
    if mono.is_empty() {
        return Err(DspError::InvalidSignal(format!("{}: no samples", path.display())));
    }
    WaveSignal::new(mono, spec.sample_rate)
}

/// Writes a mono WAVE file. 16-bit output is clipped to [-1, 1].
pub fn write_wav<T: Sample>(path: impl AsRef<Path>, x: &WaveSignal<T>, format: WavFormat) -> Result<()> {
    let (bits, sample_format) = match format {
        WavFormat::Pcm16 => (16, SampleFormat::Int),
        WavFormat::Float32 => (32, SampleFormat::Float),
    };
    let spec = WavSpec {
        channels: 1,
        sample_rate: x.sample_rate(),
        bits_per_sample: bits,
        sample_format,
    };
    let mut writer = WavWriter::create(path.as_ref(), spec)?;
    for &s in x.samples() {
        let v = s.to_f64_lossy();
        match format {
            WavFormat::Pcm16 => writer.write_sample((v.clamp(-1.0, 1.0) * 32767.0).round() as i16)?,
            WavFormat::Float32 => writer.write_sample(v as f32)?,
        }
    }
    writer.finalize()?;
    Ok(())
}
