//! Multi-scale waveform discriminator: identical conv stacks applied to the
//! signal and to successively average-pooled copies of it.

use candle_core::{DType, Device, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{AeroError, Result};
use crate::nn::{leaky_relu, reflect_pad_last, Conv1d, ConvOpts};
use crate::params::{ParamBuilder, ParameterSet};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiscriminatorConfig {
    pub num_discriminators: usize,
    pub downsample_factor: usize,
    pub base_channels: usize,
    pub max_channels: usize,
    pub downsample_layers: usize,
    pub downsample_stride: usize,
    /// Input channels per group in the strided convolutions.
    pub group_size: usize,
    pub leaky_slope: f64,
}

impl Default for DiscriminatorConfig {
    fn default() -> Self {
        Self {
            num_discriminators: 3,
            downsample_factor: 2,
            base_channels: 16,
            max_channels: 1024,
            downsample_layers: 4,
            downsample_stride: 4,
            group_size: 4,
            leaky_slope: 0.2,
        }
    }
}

const FIRST_KERNEL: usize = 15;

impl DiscriminatorConfig {
    pub fn validate(&self) -> Result<()> {
        let err = |m: &str| Err(AeroError::Config(format!("discriminator: {m}")));
        if self.num_discriminators == 0 {
            return err("num_discriminators must be at least 1");
        }
        if self.downsample_factor < 2 {
            return err("downsample_factor must be at least 2");
        }
        if self.base_channels == 0 || self.max_channels < self.base_channels || self.group_size == 0 {
            return err("need 0 < base_channels <= max_channels and a positive group size");
        }
        if self.downsample_stride == 0 {
            return err("downsample_stride must be positive");
        }
        for (cin, cout, groups) in self.strided_channels() {
            if cin % groups != 0 || cout % groups != 0 {
                return err("strided layer channels not divisible by their group count");
            }
        }
        if !(self.leaky_slope >= 0.0) {
            return err("leaky_slope must be non-negative");
        }
        Ok(())
    }

    fn strided_channels(&self) -> Vec<(usize, usize, usize)> {
        let mut c = self.base_channels;
        let mut out = Vec::new();
        for _ in 0..self.downsample_layers {
            let next = (c * self.downsample_stride).min(self.max_channels);
            out.push((c, next, (c / self.group_size).max(1)));
            c = next;
        }
        out
    }

    /// Shortest input every scale can process.
    pub fn min_length(&self) -> usize {
        (FIRST_KERNEL / 2 + 1) * self.downsample_factor.pow(self.num_discriminators as u32 - 1)
    }
}

/// Logits and intermediate activations of one scale.
#[derive(Debug, Clone)]
pub struct ScaleOutput {
    pub logits: Tensor,
    pub features: Vec<Tensor>,
}

#[derive(Debug, Clone)]
struct ScaleDiscriminator {
    layers: Vec<Conv1d>,
    slope: f64,
}

impl ScaleDiscriminator {
    fn new(pb: &ParamBuilder, cfg: &DiscriminatorConfig) -> Result<Self> {
        let mut layers = vec![Conv1d::new(&pb.pp("conv0"), 1, cfg.base_channels, FIRST_KERNEL, ConvOpts::default())?];
        let k = cfg.downsample_stride * 10 + 1;
        let mut c = cfg.base_channels;
        for (i, (cin, cout, groups)) in cfg.strided_channels().into_iter().enumerate() {
            layers.push(Conv1d::new(
                &pb.pp(format!("conv{}", i + 1)),
                cin,
                cout,
                k,
                ConvOpts { stride: cfg.downsample_stride, padding: k / 2, groups, ..Default::default() },
            )?);
            c = cout;
        }
        let n = layers.len();
        let wide = (c * 2).min(cfg.max_channels);
        layers.push(Conv1d::new(&pb.pp(format!("conv{n}")), c, wide, 5, ConvOpts { padding: 2, ..Default::default() })?);
        layers.push(Conv1d::new(&pb.pp(format!("conv{}", n + 1)), wide, 1, 3, ConvOpts { padding: 1, ..Default::default() })?);
        Ok(Self { layers, slope: cfg.leaky_slope })
    }

    /// `(B, L) -> logits (B, 1, L')` plus features.
    fn forward(&self, x: &Tensor) -> Result<ScaleOutput> {
        let mut h = reflect_pad_last(&x.unsqueeze(1)?, FIRST_KERNEL / 2, FIRST_KERNEL / 2)?;
        let mut features = Vec::with_capacity(self.layers.len() - 1);
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(&h)?;
            if i < last {
                h = leaky_relu(&h, self.slope)?;
                features.push(h.clone());
            }
        }
        Ok(ScaleOutput { logits: h, features })
    }
}

pub struct MultiScaleDiscriminator {
    cfg: DiscriminatorConfig,
    params: ParameterSet,
    scales: Vec<ScaleDiscriminator>,
}

impl std::fmt::Debug for MultiScaleDiscriminator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("MultiScaleDiscriminator")
            .field("config", &self.cfg)
            .field("parameters", &self.params.total_count())
            .finish()
    }
}

impl MultiScaleDiscriminator {
    pub fn build(cfg: &DiscriminatorConfig, seed: u64, dtype: DType, device: &Device) -> Result<Self> {
        cfg.validate()?;
        Self::assemble(cfg, ParamBuilder::for_init(seed, dtype, device))
    }

    pub fn from_params(cfg: &DiscriminatorConfig, params: &ParameterSet) -> Result<Self> {
        cfg.validate()?;
        let pb = ParamBuilder::for_load(params)?;
        let d = Self::assemble(cfg, pb.clone())?;
        let unused = pb.unused();
        if !unused.is_empty() {
            return Err(AeroError::Model(format!(
                "discriminator parameters not used by this configuration: {}",
                unused.join(", ")
            )));
        }
        Ok(d)
    }

    fn assemble(cfg: &DiscriminatorConfig, pb: ParamBuilder) -> Result<Self> {
        let scales = (0..cfg.num_discriminators)
            .map(|i| ScaleDiscriminator::new(&pb.pp(format!("scale{i}")), cfg))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { cfg: cfg.clone(), params: pb.into_params(), scales })
    }

    pub fn config(&self) -> &DiscriminatorConfig {
        &self.cfg
    }

    pub fn params(&self) -> &ParameterSet {
        &self.params
    }

    /// Scale `i` sees the `(B, L)` input average-pooled `i` times.
    pub fn forward(&self, x: &Tensor) -> Result<Vec<ScaleOutput>> {
        let (_, len) = x.dims2()?;
        let min = self.cfg.min_length();
        if len < min {
            return Err(AeroError::Model(format!(
                "discriminator input of {len} samples is too short; need at least {min}"
            )));
        }
        let mut h = x.clone();
        let mut out = Vec::with_capacity(self.scales.len());
        for (i, scale) in self.scales.iter().enumerate() {
            if i > 0 {
                h = avg_pool(&h, self.cfg.downsample_factor)?;
            }
            out.push(scale.forward(&h)?);
        }
        Ok(out)
    }
}

/// Non-overlapping mean over windows of `k`; a partial tail is dropped.
pub fn avg_pool(x: &Tensor, k: usize) -> Result<Tensor> {
    let (b, len) = x.dims2()?;
    let n = len / k;
    Ok(x.narrow(1, 0, n * k)?.reshape((b, n, k))?.mean(2)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> DiscriminatorConfig {
        DiscriminatorConfig { base_channels: 4, max_channels: 16, ..Default::default() }
    }

    #[test]
    fn scales_see_pooled_lengths() {
        let d = MultiScaleDiscriminator::build(&tiny(), 0, DType::F32, &Device::Cpu).unwrap();
        let x = Tensor::randn(0f32, 1.0, (2, 16000), &Device::Cpu).unwrap();
        let out = d.forward(&x).unwrap();
        assert_eq!(out.len(), 3);
        let first_layer_lens: Vec<usize> = out.iter().map(|o| o.features[0].dim(2).unwrap()).collect();
        assert_eq!(first_layer_lens, vec![16000, 8000, 4000]);
        for o in &out {
            let v = o.logits.flatten_all().unwrap().to_vec1::<f32>().unwrap();
            assert!(v.iter().all(|x| x.is_finite()));
        }
    }

    #[test]
    fn too_short_reports_minimum() {
        let d = MultiScaleDiscriminator::build(&tiny(), 0, DType::F32, &Device::Cpu).unwrap();
        let x = Tensor::zeros((1, 20), DType::F32, &Device::Cpu).unwrap();
        let e = d.forward(&x).unwrap_err().to_string();
        assert!(e.contains("32"), "{e}");
        let ok = Tensor::zeros((1, 32), DType::F32, &Device::Cpu).unwrap();
        assert!(d.forward(&ok).is_ok());
    }

    #[test]
    fn pooling_drops_odd_tail() {
        let x = Tensor::new(&[[1f32, 3.0, 5.0, 7.0, 100.0]], &Device::Cpu).unwrap();
        assert_eq!(avg_pool(&x, 2).unwrap().to_vec2::<f32>().unwrap(), vec![vec![2.0, 6.0]]);
    }

    #[test]
    fn default_channel_plan() {
        let cfg = DiscriminatorConfig::default();
        cfg.validate().unwrap();
        assert_eq!(
            cfg.strided_channels(),
            vec![(16, 64, 4), (64, 256, 16), (256, 1024, 64), (1024, 1024, 256)]
        );
    }
}
