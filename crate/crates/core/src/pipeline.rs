//! Waveform-in, waveform-out super-resolution, plus a differentiable batch
//! path used during training.

use candle_core::{DType, Device, Tensor, WithDType};

use crate::config::TransformConfig;
use crate::dsp::{sinc_resample, to_cac, CacArray, ComplexSpectrogram, Sample, SpectroTransformSpec, WaveSignal};
use crate::error::{AeroError, Result};
use crate::model::{AeroModel, IdentityModel, SpectrogramModel};
use crate::nn::check_finite;
use crate::spectral::{TensorIstft, TensorStft};
use crate::Wave;

/// `(1, 2, bins - 1, frames)` tensor of a spectrogram with the Nyquist bin dropped.
pub fn cac_tensor<T: Sample>(spec: &ComplexSpectrogram<T>, dtype: DType, device: &Device) -> Result<Tensor> {
    let cac = to_cac(spec, true);
    let (c, b, n) = cac.shape();
    let values: Vec<f64> = cac.values().iter().map(|v| v.to_f64_lossy()).collect();
    Ok(Tensor::from_vec(values, (1, c, b, n), device)?.to_dtype(dtype)?)
}

/// Full pipeline: analysis STFT, drop Nyquist, model, re-add Nyquist,
/// synthesis iSTFT. Output has `s · len(x)` samples at `s · rate(x)`.
pub fn super_resolve<T, M>(model: &M, x: &WaveSignal<T>, spec: &SpectroTransformSpec) -> Result<WaveSignal<T>>
where
    T: Sample + WithDType,
    M: SpectrogramModel + ?Sized,
{
    let analysis = spec.analyze(x)?;
    let input = cac_tensor(&analysis, model.dtype(), &model.device())?;
    let out = model.forward_cac(&input)?;
    if out.dims() != input.dims() {
        return Err(AeroError::Model(format!(
            "model changed the spectrogram shape from {:?} to {:?}",
            input.dims(),
            out.dims()
        )));
    }
    check_finite(&out, "model output")?;
    let (_, c, b, n) = out.dims4()?;
    let values = out.flatten_all()?.to_dtype(T::DTYPE)?.to_vec1::<T>()?;
    let restored = CacArray::new(c, b, n, values)?.to_complex(true, analysis.source_rate())?;
    Ok(spec.synthesize(&restored, x.len())?)
}

/// Differentiable batch version of [`super_resolve`] for training.
#[derive(Debug, Clone)]
pub struct TensorPipeline {
    spec: SpectroTransformSpec,
    analysis: TensorStft,
    synthesis: TensorIstft,
}

impl TensorPipeline {
    pub fn new(spec: SpectroTransformSpec, dtype: DType, device: &Device) -> Result<Self> {
        let bins = spec.fft_size / 2;
        Ok(Self {
            analysis: TensorStft::new(spec.analysis, dtype, device)?,
            synthesis: TensorIstft::new(spec.synthesis, bins, dtype, device)?,
            spec,
        })
    }

    pub fn spec(&self) -> &SpectroTransformSpec {
        &self.spec
    }

    /// `(B, L) -> (B, 2, fft/2, frames)`.
    pub fn analyze(&self, lr: &Tensor) -> Result<Tensor> {
        let (re, im) = self.analysis.forward(lr)?;
        let bins = self.spec.fft_size / 2;
        let stacked = Tensor::stack(&[re.narrow(2, 0, bins)?, im.narrow(2, 0, bins)?], 1)?;
        Ok(stacked.transpose(2, 3)?.contiguous()?)
    }

    /// `(B, 2, fft/2, frames) -> (B, s · lr_len)`, reconciling frame counts.
    pub fn synthesize(&self, cac: &Tensor, lr_len: usize) -> Result<Tensor> {
        let want = self.spec.synthesis_frames(lr_len);
        let have = cac.dim(3)?;
        let cac = if have > want {
            cac.narrow(3, 0, want)?
        } else if have < want {
            cac.pad_with_zeros(3, 0, want - have)?
        } else {
            cac.clone()
        };
        self.synthesis.forward(&cac, self.spec.output_len(lr_len))
    }

    pub fn run<M: SpectrogramModel + ?Sized>(&self, model: &M, lr: &Tensor) -> Result<Tensor> {
        let (_, len) = lr.dims2()?;
        let out = model.forward_cac(&self.analyze(lr)?)?;
        self.synthesize(&out, len)
    }
}

/// Anything that raises a waveform's sample rate.
pub trait Upsampler {
    fn name(&self) -> String;
    fn upsample(&self, x: &Wave, target_rate: u32) -> Result<Wave>;
}

fn check_scale(x: &Wave, target_rate: u32, scale: usize) -> Result<()> {
    if x.sample_rate() as u64 * scale as u64 != target_rate as u64 {
        return Err(AeroError::Config(format!(
            "input at {} Hz times scale {scale} does not give {target_rate} Hz",
            x.sample_rate()
        )));
    }
    Ok(())
}

/// Trained generator behind the waveform interface.
pub struct AeroUpsampler {
    pub model: AeroModel,
    pub transform: TransformConfig,
}

impl AeroUpsampler {
    pub fn new(model: AeroModel, transform: TransformConfig) -> Self {
        Self { model, transform }
    }
}

impl Upsampler for AeroUpsampler {
    fn name(&self) -> String {
        "aero".into()
    }

    fn upsample(&self, x: &Wave, target_rate: u32) -> Result<Wave> {
        if x.sample_rate() != self.transform.source_rate || target_rate != self.transform.target_rate {
            return Err(AeroError::Config(format!(
                "model maps {} Hz to {} Hz, asked for {} Hz to {target_rate} Hz",
                self.transform.source_rate,
                self.transform.target_rate,
                x.sample_rate()
            )));
        }
        super_resolve(&self.model, &self.transform.model_input(x)?, &self.transform.spec()?)
    }
}

/// Band-limited sinc interpolation baseline.
#[derive(Debug, Clone, Copy, Default)]
pub struct SincUpsampler;

impl Upsampler for SincUpsampler {
    fn name(&self) -> String {
        "sinc".into()
    }

    fn upsample(&self, x: &Wave, target_rate: u32) -> Result<Wave> {
        Ok(sinc_resample(x, target_rate)?)
    }
}

/// Analysis and synthesis with an identity network in between.
#[derive(Debug, Clone, Copy)]
pub struct SpectralIdentityUpsampler {
    pub spec: SpectroTransformSpec,
}

impl Upsampler for SpectralIdentityUpsampler {
    fn name(&self) -> String {
        "spectral-identity".into()
    }

    fn upsample(&self, x: &Wave, target_rate: u32) -> Result<Wave> {
        check_scale(x, target_rate, self.spec.scale)?;
        super_resolve(&IdentityModel, x, &self.spec)
    }
}
