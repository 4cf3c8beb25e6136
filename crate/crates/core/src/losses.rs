//! Training objectives: multi-resolution STFT loss, adversarial and
//! feature-matching terms, and their weighted sum.

use candle_core::{DType, Device, Tensor};
use serde::{Deserialize, Serialize};

use crate::discriminator::{MultiScaleDiscriminator, ScaleOutput};
use crate::dsp::{stft, Sample, StftConfig, WaveSignal};
use crate::error::{AeroError, Result};
use crate::spectral::TensorStft;

pub const MAG_FLOOR: f64 = 1e-7;
pub const FEATURE_FLOOR: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StftLossResolution {
    pub fft_size: usize,
    pub hop_length: usize,
    pub win_length: usize,
}

impl StftLossResolution {
    pub const fn new(fft_size: usize, hop_length: usize, win_length: usize) -> Self {
        Self { fft_size, hop_length, win_length }
    }

    pub fn stft_config(&self) -> Result<StftConfig> {
        Ok(StftConfig::hann(self.fft_size, self.win_length, self.hop_length)?)
    }
}

/// The three resolutions used for training, zipped in order.
pub const LOSS_RESOLUTIONS: [StftLossResolution; 3] = [
    StftLossResolution::new(512, 50, 240),
    StftLossResolution::new(1024, 120, 600),
    StftLossResolution::new(2048, 240, 1200),
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum AdversarialKind {
    #[default]
    Hinge,
    LeastSquares,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub lambda_spectral: f64,
    pub lambda_adv: f64,
    pub lambda_feat: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { lambda_spectral: 1.0, lambda_adv: 1.0, lambda_feat: 10.0 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [self.lambda_spectral, self.lambda_adv, self.lambda_feat];
        if all.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(AeroError::Config("loss weights must be finite and non-negative".into()));
        }
        if all.iter().all(|w| *w == 0.0) {
            return Err(AeroError::Config("at least one loss weight must be positive".into()));
        }
        Ok(())
    }

    /// Whether any term needs the discriminator.
    pub fn uses_discriminator(&self) -> bool {
        self.lambda_adv > 0.0 || self.lambda_feat > 0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossReport {
    pub spectral_sc: f64,
    pub spectral_mag: f64,
    pub adversarial_g: f64,
    pub feature_match: f64,
    pub total_g: f64,
    pub total_d: f64,
}

fn floored_magnitudes<T: Sample>(x: &WaveSignal<T>, cfg: &StftConfig) -> Result<Vec<f64>> {
    let spec = stft(&x.cast::<f64>(), cfg)?;
    Ok(spec.values().iter().map(|c| c.norm().max(MAG_FLOOR)).collect())
}

/// Spectral convergence and log-magnitude distance at one resolution.
pub fn spectral_loss_single<T: Sample>(
    y: &WaveSignal<T>,
    yhat: &WaveSignal<T>,
    res: StftLossResolution,
) -> Result<(f64, f64)> {
    if y.len() != yhat.len() || y.sample_rate() != yhat.sample_rate() {
        return Err(AeroError::Model(format!(
            "spectral loss needs matching signals, got {} @ {} Hz and {} @ {} Hz",
            y.len(),
            y.sample_rate(),
            yhat.len(),
            yhat.sample_rate()
        )));
    }
    if y.samples().iter().all(|s| *s == T::zero()) {
        return Err(AeroError::Model("spectral convergence undefined for an all-zero reference".into()));
    }
    let cfg = res.stft_config()?;
    if y.len() <= cfg.fft_size / 2 {
        return Err(AeroError::Model(format!(
            "{} samples too short for the {} point loss resolution",
            y.len(),
            cfg.fft_size
        )));
    }
    let a = floored_magnitudes(y, &cfg)?;
    let b = floored_magnitudes(yhat, &cfg)?;
    let num: f64 = a.iter().zip(&b).map(|(p, q)| (p - q).powi(2)).sum::<f64>().sqrt();
    let den: f64 = a.iter().map(|p| p * p).sum::<f64>().sqrt();
    let mag = a.iter().zip(&b).map(|(p, q)| (p.ln() - q.ln()).abs()).sum::<f64>() / a.len() as f64;
    Ok((num / den, mag))
}

/// Mean of [`spectral_loss_single`] over [`LOSS_RESOLUTIONS`].
pub fn multi_res_spectral_loss<T: Sample>(y: &WaveSignal<T>, yhat: &WaveSignal<T>) -> Result<(f64, f64)> {
    let mut sc = 0.0;
    let mut mag = 0.0;
    for res in LOSS_RESOLUTIONS {
        let (s, m) = spectral_loss_single(y, yhat, res)?;
        sc += s;
        mag += m;
    }
    let n = LOSS_RESOLUTIONS.len() as f64;
    Ok((sc / n, mag / n))
}

/// Differentiable multi-resolution STFT loss on `(B, L)` batches. Norms and
/// means run over the whole batch.
#[derive(Debug, Clone)]
pub struct SpectralLoss {
    stfts: Vec<TensorStft>,
}

impl SpectralLoss {
    pub fn new(resolutions: &[StftLossResolution], dtype: DType, device: &Device) -> Result<Self> {
        if resolutions.is_empty() {
            return Err(AeroError::Config("at least one loss resolution required".into()));
        }
        let stfts = resolutions
            .iter()
            .map(|r| TensorStft::new(r.stft_config()?, dtype, device))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { stfts })
    }

    pub fn standard(dtype: DType, device: &Device) -> Result<Self> {
        Self::new(&LOSS_RESOLUTIONS, dtype, device)
    }

    /// Mean spectral convergence and mean log-magnitude distance.
    pub fn forward(&self, y: &Tensor, yhat: &Tensor) -> Result<(Tensor, Tensor)> {
        if y.dims() != yhat.dims() {
            return Err(AeroError::Model(format!(
                "spectral loss shape mismatch {:?} vs {:?}",
                y.dims(),
                yhat.dims()
            )));
        }
        let floor = MAG_FLOOR * MAG_FLOOR;
        let mut sc_terms = Vec::with_capacity(self.stfts.len());
        let mut mag_terms = Vec::with_capacity(self.stfts.len());
        for s in &self.stfts {
            let a = s.magnitude(y, floor)?;
            let b = s.magnitude(yhat, floor)?;
            let num = a.sub(&b)?.sqr()?.sum_all()?.sqrt()?;
            let den = a.sqr()?.sum_all()?.sqrt()?;
            sc_terms.push(num.div(&den)?);
            mag_terms.push(a.log()?.sub(&b.log()?)?.abs()?.mean_all()?);
        }
        let n = self.stfts.len() as f64;
        let sc = Tensor::stack(&sc_terms, 0)?.sum_all()?.affine(1.0 / n, 0.0)?;
        let mag = Tensor::stack(&mag_terms, 0)?.sum_all()?.affine(1.0 / n, 0.0)?;
        Ok((sc, mag))
    }
}

fn mean_over(terms: Vec<Tensor>) -> Result<Tensor> {
    let n = terms.len();
    if n == 0 {
        return Err(AeroError::Model("no discriminator outputs".into()));
    }
    Ok(Tensor::stack(&terms, 0)?.sum_all()?.affine(1.0 / n as f64, 0.0)?)
}

fn check_scales(real: &[Tensor], fake: &[Tensor]) -> Result<()> {
    if real.len() != fake.len() {
        return Err(AeroError::Model(format!(
            "{} real scales vs {} fake scales",
            real.len(),
            fake.len()
        )));
    }
    Ok(())
}

/// Mean over scales of the discriminator objective.
pub fn discriminator_loss(real: &[Tensor], fake: &[Tensor], kind: AdversarialKind) -> Result<Tensor> {
    check_scales(real, fake)?;
    let terms = real
        .iter()
        .zip(fake)
        .map(|(r, f)| -> Result<Tensor> {
            Ok(match kind {
                AdversarialKind::Hinge => r
                    .affine(-1.0, 1.0)?
                    .relu()?
                    .mean_all()?
                    .add(&f.affine(1.0, 1.0)?.relu()?.mean_all()?)?,
                AdversarialKind::LeastSquares => r
                    .affine(1.0, -1.0)?
                    .sqr()?
                    .mean_all()?
                    .add(&f.sqr()?.mean_all()?)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    mean_over(terms)
}

/// Mean over scales of the generator's adversarial objective.
pub fn generator_adv_loss(fake: &[Tensor], kind: AdversarialKind) -> Result<Tensor> {
    let terms = fake
        .iter()
        .map(|f| -> Result<Tensor> {
            Ok(match kind {
                AdversarialKind::Hinge => f.affine(-1.0, 1.0)?.relu()?.mean_all()?,
                AdversarialKind::LeastSquares => f.affine(1.0, -1.0)?.sqr()?.mean_all()?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    mean_over(terms)
}

/// Mean over scales and layers of `mean|r - f| / max(mean|r|, 1e-7)`.
pub fn feature_matching_loss(real: &[Vec<Tensor>], fake: &[Vec<Tensor>]) -> Result<Tensor> {
    if real.len() != fake.len() {
        return Err(AeroError::Model("feature scale count mismatch".into()));
    }
    let mut terms = Vec::new();
    for (rs, fs) in real.iter().zip(fake) {
        if rs.len() != fs.len() {
            return Err(AeroError::Model("feature layer count mismatch".into()));
        }
        for (r, f) in rs.iter().zip(fs) {
            let norm = r.abs()?.mean_all()?.clamp(FEATURE_FLOOR, f64::INFINITY)?;
            terms.push(r.sub(f)?.abs()?.mean_all()?.div(&norm)?);
        }
    }
    mean_over(terms)
}

pub fn logits(outs: &[ScaleOutput]) -> Vec<Tensor> {
    outs.iter().map(|o| o.logits.clone()).collect()
}

pub fn features(outs: &[ScaleOutput], detach: bool) -> Vec<Vec<Tensor>> {
    outs.iter()
        .map(|o| o.features.iter().map(|f| if detach { f.detach() } else { f.clone() }).collect())
        .collect()
}

fn scalar(t: &Tensor) -> Result<f64> {
    Ok(t.to_dtype(DType::F64)?.to_scalar::<f64>()?)
}

/// Weighted generator objective on `(B, L)` batches. The discriminator is
/// only consulted when an adversarial or feature weight is positive; its
/// view of the real signal is detached.
pub fn total_generator_loss(
    y: &Tensor,
    yhat: &Tensor,
    disc: Option<&MultiScaleDiscriminator>,
    spectral: &SpectralLoss,
    weights: &LossWeights,
    kind: AdversarialKind,
) -> Result<(Tensor, LossReport)> {
    weights.validate()?;
    let (sc, mag) = spectral.forward(y, yhat)?;
    let mut total = sc.add(&mag)?.affine(weights.lambda_spectral, 0.0)?;
    let mut report = LossReport {
        spectral_sc: scalar(&sc)?,
        spectral_mag: scalar(&mag)?,
        ..Default::default()
    };
    if weights.uses_discriminator() {
        let d = disc.ok_or_else(|| {
            AeroError::Model("adversarial or feature weight set but no discriminator supplied".into())
        })?;
        let real = d.forward(&y.detach())?;
        let fake = d.forward(yhat)?;
        let real_logits: Vec<Tensor> = logits(&real).iter().map(|t| t.detach()).collect();
        let adv = generator_adv_loss(&logits(&fake), kind)?;
        let feat = feature_matching_loss(&features(&real, true), &features(&fake, false))?;
        report.adversarial_g = scalar(&adv)?;
        report.feature_match = scalar(&feat)?;
        report.total_d = scalar(&discriminator_loss(&real_logits, &logits(&fake), kind)?)?;
        total = total
            .add(&adv.affine(weights.lambda_adv, 0.0)?)?
            .add(&feat.affine(weights.lambda_feat, 0.0)?)?;
    }
    report.total_g = scalar(&total)?;
    Ok((total, report))
}

/// Signal-level convenience wrapper around [`total_generator_loss`].
pub fn evaluate_generator_loss<T: Sample>(
    y: &WaveSignal<T>,
    yhat: &WaveSignal<T>,
    disc: Option<&MultiScaleDiscriminator>,
    weights: &LossWeights,
    kind: AdversarialKind,
) -> Result<LossReport> {
    if y.len() != yhat.len() {
        return Err(AeroError::Model("generator loss needs equal-length signals".into()));
    }
    let (dtype, device) = match disc.and_then(|d| d.params().iter().next().map(|(_, v)| (v.dtype(), v.device().clone()))) {
        Some(x) => x,
        None => (DType::F64, Device::Cpu),
    };
    let to_t = |w: &WaveSignal<T>| -> Result<Tensor> {
        let v: Vec<f64> = w.samples().iter().map(|s| s.to_f64_lossy()).collect();
        Ok(Tensor::from_vec(v, (1, w.len()), &device)?.to_dtype(dtype)?)
    };
    let spectral = SpectralLoss::standard(dtype, &device)?;
    Ok(total_generator_loss(&to_t(y)?, &to_t(yhat)?, disc, &spectral, weights, kind)?.1)
}
