//! The generator: a U-Net whose convolutions run along the frequency axis of
//! a complex-as-channels spectrogram, with time folded into the batch.

use candle_core::{DType, Device, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{AeroError, Result};
use crate::nn::{glu, sigmoid, Activation, ActivationKind, BiLstm, Conv1d, ConvOpts, ConvTranspose1d, LocalAttention};
use crate::params::{Init, ParamBuilder, ParameterSet, ParameterSummary};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum SkipMode {
    #[default]
    Concat,
    Sum,
}

/// Where the LSTM and attention modules live.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum SequencePlacement {
    /// Inside the residual branches of the listed encoder layers.
    #[default]
    Branch,
    /// Once, on the latent between encoder and decoder.
    Bottleneck,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub in_channels: usize,
    pub base_channels: usize,
    pub channel_growth: usize,
    pub freq_strides: Vec<usize>,
    pub kernel_size: usize,
    pub residual_branches_per_layer: usize,
    pub branch_compress_factor: usize,
    /// 1-based encoder layer indices that carry sequence modules.
    pub inner_layers_with_sequence_modules: Vec<usize>,
    pub sequence_placement: SequencePlacement,
    pub lstm_layers: usize,
    pub attention_heads: usize,
    pub attention_window: usize,
    pub use_ftb: bool,
    pub ftb_channels: usize,
    pub ftb_kernel: usize,
    pub activation: ActivationKind,
    pub snake_alpha_init: f64,
    pub skip_mode: SkipMode,
    pub residual_scale_init: f64,
    /// Divide each example by its standard deviation on the way in and
    /// multiply it back on the way out.
    pub normalize_input: bool,
    /// Frequency bins seen by the network (`fft_size / 2` after dropping Nyquist).
    pub freq_bins: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            in_channels: 2,
            base_channels: 48,
            channel_growth: 2,
            freq_strides: vec![4, 4, 2, 2],
            kernel_size: 8,
            residual_branches_per_layer: 2,
            branch_compress_factor: 4,
            inner_layers_with_sequence_modules: vec![3, 4],
            sequence_placement: SequencePlacement::Branch,
            lstm_layers: 2,
            attention_heads: 4,
            attention_window: 100,
            use_ftb: true,
            ftb_channels: 5,
            ftb_kernel: 9,
            activation: ActivationKind::Snake,
            snake_alpha_init: 1.0,
            skip_mode: SkipMode::Concat,
            residual_scale_init: 1e-3,
            normalize_input: true,
            freq_bins: 256,
        }
    }
}

impl ModelConfig {
    pub fn depth(&self) -> usize {
        self.freq_strides.len()
    }

    /// Channels after encoder layer `i` (0-based).
    pub fn channels(&self, i: usize) -> usize {
        self.base_channels * self.channel_growth.pow(i as u32)
    }

    pub fn total_stride(&self) -> usize {
        self.freq_strides.iter().product()
    }

    /// Frequency extent of the latent grid.
    pub fn latent_bins(&self) -> usize {
        self.freq_bins / self.total_stride()
    }

    pub fn has_sequence(&self, layer: usize) -> bool {
        self.sequence_placement == SequencePlacement::Branch
            && self.inner_layers_with_sequence_modules.contains(&(layer + 1))
    }

    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(AeroError::Config(format!("model: {m}")));
        if self.freq_strides.is_empty() {
            return err("freq_strides must not be empty".into());
        }
        if self.in_channels == 0 || self.base_channels == 0 || self.channel_growth == 0 {
            return err("channel counts must be positive".into());
        }
        let total = self.total_stride();
        if total == 0 || self.freq_bins % total != 0 {
            return err(format!(
                "{} frequency bins not divisible by the stride product {total}; the network sees fft_size/2 bins \
                 after the Nyquist bin is dropped, so pick an fft_size whose half is a multiple of {total}",
                self.freq_bins
            ));
        }
        for &s in &self.freq_strides {
            if s == 0 || s > self.kernel_size || (self.kernel_size - s) % 2 != 0 {
                return err(format!("stride {s} incompatible with kernel {}", self.kernel_size));
            }
        }
        if self.branch_compress_factor == 0 {
            return err("branch_compress_factor must be positive".into());
        }
        for i in 0..self.depth() {
            let c = self.channels(i);
            if c % self.branch_compress_factor != 0 {
                return err(format!("{c} channels not divisible by compress factor {}", self.branch_compress_factor));
            }
            if self.has_sequence(i) && (c / self.branch_compress_factor) % self.attention_heads.max(1) != 0 {
                return err(format!(
                    "branch width {} at layer {} not divisible by {} attention heads",
                    c / self.branch_compress_factor,
                    i + 1,
                    self.attention_heads
                ));
            }
        }
        for &l in &self.inner_layers_with_sequence_modules {
            if l == 0 || l > self.depth() {
                return err(format!("sequence layer {l} outside 1..={}", self.depth()));
            }
        }
        if self.attention_heads == 0 || self.attention_window == 0 {
            return err("attention needs at least one head and a positive window".into());
        }
        if self.sequence_placement == SequencePlacement::Bottleneck
            && !self.inner_layers_with_sequence_modules.is_empty()
            && self.channels(self.depth() - 1) % self.attention_heads != 0
        {
            return err("latent width not divisible by attention heads".into());
        }
        if self.ftb_kernel % 2 == 0 || self.ftb_channels == 0 {
            return err("ftb_kernel must be odd and ftb_channels positive".into());
        }
        if !(self.snake_alpha_init > 0.0) {
            return err("snake_alpha_init must be positive".into());
        }
        Ok(())
    }
}

/// Anything mapping a `(B, 2, F, N)` spectrogram tensor to one of the same shape.
pub trait SpectrogramModel {
    fn forward_cac(&self, x: &Tensor) -> Result<Tensor>;
    fn dtype(&self) -> DType;
    fn device(&self) -> Device;
}

/// Returns its input unchanged.
#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityModel;

impl SpectrogramModel for IdentityModel {
    fn forward_cac(&self, x: &Tensor) -> Result<Tensor> {
        Ok(x.clone())
    }
    fn dtype(&self) -> DType {
        DType::F64
    }
    fn device(&self) -> Device {
        Device::Cpu
    }
}

/// Frequency transformation block on `(M, C, F)` features.
#[derive(Debug, Clone)]
pub struct Ftb {
    squeeze: Conv1d,
    attend: Conv1d,
    freq: Tensor,
    fuse: Conv1d,
    bins: usize,
}

impl Ftb {
    pub fn new(pb: &ParamBuilder, channels: usize, bins: usize, hidden: usize, kernel: usize) -> Result<Self> {
        Ok(Self {
            squeeze: Conv1d::new(&pb.pp("squeeze"), channels, hidden, 1, ConvOpts::default())?,
            attend: Conv1d::new(&pb.pp("attend"), hidden, 1, kernel, ConvOpts { padding: kernel / 2, ..Default::default() })?,
            freq: pb.get(&[bins, bins], "freq", Init::Identity)?,
            fuse: Conv1d::new(&pb.pp("fuse"), 2 * channels, channels, 1, ConvOpts { bias: false, ..Default::default() })?,
            bins,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let f = x.dim(2)?;
        if f != self.bins {
            return Err(AeroError::Model(format!(
                "frequency block built for {} bins received {f}",
                self.bins
            )));
        }
        let mask = self.attend.forward(&self.squeeze.forward(x)?.relu()?)?;
        let mask = sigmoid(&mask)?.affine(2.0, 0.0)?;
        let a = x.broadcast_mul(&mask)?;
        let b = a.broadcast_matmul(&self.freq.t()?)?;
        self.fuse.forward(&Tensor::cat(&[&a, &b], 1)?)
    }
}

#[derive(Debug, Clone)]
struct SequenceStack {
    lstm: BiLstm,
    attn: LocalAttention,
}

impl SequenceStack {
    fn new(pb: &ParamBuilder, dim: usize, cfg: &ModelConfig) -> Result<Self> {
        Ok(Self {
            lstm: BiLstm::new(&pb.pp("lstm"), dim, cfg.lstm_layers)?,
            attn: LocalAttention::new(&pb.pp("attn"), dim, cfg.attention_heads, cfg.attention_window)?,
        })
    }

    /// `(B·N, C, F)` with `frames = N` -> same shape, sequence ops over N.
    fn forward(&self, x: &Tensor, frames: usize) -> Result<Tensor> {
        let (bn, c, f) = x.dims3()?;
        let b = bn / frames;
        let seq = x
            .reshape((b, frames, c, f))?
            .permute((0, 3, 1, 2))?
            .reshape((b * f, frames, c))?;
        let seq = self.attn.forward(&self.lstm.forward(&seq)?)?;
        Ok(seq.reshape((b, f, frames, c))?.permute((0, 2, 3, 1))?.reshape((bn, c, f))?)
    }
}

#[derive(Debug, Clone)]
struct Branch {
    compress: Conv1d,
    dilated: Conv1d,
    act: Activation,
    seq: Option<SequenceStack>,
    expand: Conv1d,
    scale: Tensor,
}

impl Branch {
    fn new(pb: &ParamBuilder, channels: usize, dilation: usize, seq: bool, cfg: &ModelConfig) -> Result<Self> {
        let inner = channels / cfg.branch_compress_factor;
        Ok(Self {
            compress: Conv1d::new(&pb.pp("compress"), channels, inner, 1, ConvOpts::default())?,
            dilated: Conv1d::new(
                &pb.pp("dilated"),
                inner,
                inner,
                3,
                ConvOpts { padding: dilation, dilation, ..Default::default() },
            )?,
            act: Activation::new(&pb.pp("act"), cfg.activation, inner, cfg.snake_alpha_init)?,
            seq: if seq { Some(SequenceStack::new(&pb.pp("seq"), inner, cfg)?) } else { None },
            expand: Conv1d::new(&pb.pp("expand"), inner, 2 * channels, 1, ConvOpts::default())?,
            scale: pb.get(&[1], "scale", Init::Const(cfg.residual_scale_init))?,
        })
    }

    fn forward(&self, x: &Tensor, frames: usize) -> Result<Tensor> {
        let mut h = self.act.forward(&self.dilated.forward(&self.compress.forward(x)?)?)?;
        if let Some(seq) = &self.seq {
            h = seq.forward(&h, frames)?;
        }
        let h = glu(&self.expand.forward(&h)?, 1)?;
        Ok(x.add(&h.broadcast_mul(&self.scale)?)?)
    }
}

#[derive(Debug, Clone)]
struct EncoderLayer {
    ftb: Option<Ftb>,
    conv: Conv1d,
    act: Activation,
    branches: Vec<Branch>,
    rewrite: Conv1d,
}

impl EncoderLayer {
    fn forward(&self, x: &Tensor, frames: usize) -> Result<Tensor> {
        let x = match &self.ftb {
            Some(ftb) => ftb.forward(x)?,
            None => x.clone(),
        };
        let mut h = self.act.forward(&self.conv.forward(&x)?)?;
        for b in &self.branches {
            h = b.forward(&h, frames)?;
        }
        glu(&self.rewrite.forward(&h)?, 1)
    }
}

#[derive(Debug, Clone)]
struct DecoderLayer {
    rewrite: Conv1d,
    conv: ConvTranspose1d,
    act: Option<Activation>,
}

impl DecoderLayer {
    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let h = self.conv.forward(&glu(&self.rewrite.forward(x)?, 1)?)?;
        match &self.act {
            Some(a) => a.forward(&h),
            None => Ok(h),
        }
    }
}

pub const NORM_EPS: f64 = 1e-5;

/// Per-example standard deviation of `(B, C, F, N)`, shaped `(B, 1, 1, 1)`.
fn example_std(x: &Tensor) -> Result<Tensor> {
    let b = x.dim(0)?;
    let flat = x.flatten_from(1)?;
    let centered = flat.broadcast_sub(&flat.mean_keepdim(1)?)?;
    let sd = centered.sqr()?.mean_keepdim(1)?.sqrt()?.affine(1.0, NORM_EPS)?;
    Ok(sd.reshape((b, 1, 1, 1))?)
}

/// Built generator. Holds its own parameters; modules alias their storage,
/// so optimiser updates to [`AeroModel::params`] are visible to `forward`.
pub struct AeroModel {
    cfg: ModelConfig,
    params: ParameterSet,
    encoders: Vec<EncoderLayer>,
    bottleneck: Option<SequenceStack>,
    decoders: Vec<DecoderLayer>,
    dtype: DType,
    device: Device,
}

impl std::fmt::Debug for AeroModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("AeroModel")
            .field("config", &self.cfg)
            .field("parameters", &self.params.total_count())
            .finish()
    }
}

/// Fresh parameters for `cfg`, deterministic in `seed`.
pub fn build_model(cfg: &ModelConfig, seed: u64) -> Result<ParameterSet> {
    Ok(AeroModel::build(cfg, seed, DType::F32, &Device::Cpu)?.params)
}

impl AeroModel {
    pub fn build(cfg: &ModelConfig, seed: u64, dtype: DType, device: &Device) -> Result<Self> {
        cfg.validate()?;
        let pb = ParamBuilder::for_init(seed, dtype, device);
        Self::assemble(cfg, pb)
    }

    /// Binds to existing parameters, sharing their storage.
    pub fn from_params(cfg: &ModelConfig, params: &ParameterSet) -> Result<Self> {
        cfg.validate()?;
        let pb = ParamBuilder::for_load(params)?;
        let model = Self::assemble(cfg, pb.clone())?;
        let unused = pb.unused();
        if !unused.is_empty() {
            return Err(AeroError::Model(format!(
                "parameters not used by this configuration: {}",
                unused.join(", ")
            )));
        }
        Ok(model)
    }

    fn assemble(cfg: &ModelConfig, pb: ParamBuilder) -> Result<Self> {
        let depth = cfg.depth();
        let k = cfg.kernel_size;
        let mut encoders = Vec::with_capacity(depth);
        let mut bins = cfg.freq_bins;
        for i in 0..depth {
            let lp = pb.pp(format!("encoder{i}"));
            let cin = if i == 0 { cfg.in_channels } else { cfg.channels(i - 1) };
            let cout = cfg.channels(i);
            let s = cfg.freq_strides[i];
            let ftb = if cfg.use_ftb {
                Some(Ftb::new(&lp.pp("ftb"), cin, bins, cfg.ftb_channels, cfg.ftb_kernel)?)
            } else {
                None
            };
            let conv = Conv1d::new(&lp.pp("conv"), cin, cout, k, ConvOpts { stride: s, padding: (k - s) / 2, ..Default::default() })?;
            let act = Activation::new(&lp.pp("act"), cfg.activation, cout, cfg.snake_alpha_init)?;
            let branches = (0..cfg.residual_branches_per_layer)
                .map(|j| Branch::new(&lp.pp(format!("branch{j}")), cout, 1 << j, cfg.has_sequence(i), cfg))
                .collect::<Result<Vec<_>>>()?;
            let rewrite = Conv1d::new(&lp.pp("rewrite"), cout, 2 * cout, 1, ConvOpts::default())?;
            encoders.push(EncoderLayer { ftb, conv, act, branches, rewrite });
            bins /= s;
        }
        let bottleneck = if cfg.sequence_placement == SequencePlacement::Bottleneck
            && !cfg.inner_layers_with_sequence_modules.is_empty()
        {
            Some(SequenceStack::new(&pb.pp("bottleneck"), cfg.channels(depth - 1), cfg)?)
        } else {
            None
        };
        let mut decoders = Vec::with_capacity(depth);
        for i in (0..depth).rev() {
            let lp = pb.pp(format!("decoder{i}"));
            let c = cfg.channels(i);
            let cout = if i == 0 { cfg.in_channels } else { cfg.channels(i - 1) };
            let cin = match cfg.skip_mode {
                SkipMode::Concat => 2 * c,
                SkipMode::Sum => c,
            };
            let s = cfg.freq_strides[i];
            let rewrite = Conv1d::new(&lp.pp("rewrite"), cin, 2 * c, 1, ConvOpts::default())?;
            let conv = ConvTranspose1d::new(&lp.pp("conv"), c, cout, k, s, (k - s) / 2)?;
            let act = if i == 0 {
                None
            } else {
                Some(Activation::new(&lp.pp("act"), cfg.activation, cout, cfg.snake_alpha_init)?)
            };
            decoders.push(DecoderLayer { rewrite, conv, act });
        }
        let dtype = pb.dtype();
        let device = pb.device();
        Ok(Self {
            cfg: cfg.clone(),
            params: pb.into_params(),
            encoders,
            bottleneck,
            decoders,
            dtype,
            device,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn params(&self) -> &ParameterSet {
        &self.params
    }

    pub fn parameter_summary(&self) -> ParameterSummary {
        self.params.summary()
    }

    /// `(B, 2, F, N) -> (B, 2, F, N)`.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (b, c, f, n) = x.dims4()?;
        if c != self.cfg.in_channels || f != self.cfg.freq_bins {
            return Err(AeroError::Model(format!(
                "model expects (B, {}, {}, N), got {:?}",
                self.cfg.in_channels,
                self.cfg.freq_bins,
                x.dims()
            )));
        }
        if n == 0 {
            return Err(AeroError::Model("input has no frames".into()));
        }
        let std = if self.cfg.normalize_input { Some(example_std(x)?) } else { None };
        let x = match &std {
            Some(sd) => x.broadcast_div(sd)?,
            None => x.clone(),
        };
        let mut h = x.permute((0, 3, 1, 2))?.reshape((b * n, c, f))?;
        let mut skips = Vec::with_capacity(self.encoders.len());
        for enc in &self.encoders {
            h = enc.forward(&h, n)?;
            skips.push(h.clone());
        }
        if let Some(seq) = &self.bottleneck {
            h = seq.forward(&h, n)?;
        }
        for dec in &self.decoders {
            let skip = skips.pop().expect("one skip per decoder");
            let input = match self.cfg.skip_mode {
                SkipMode::Concat => Tensor::cat(&[&h, &skip], 1)?,
                SkipMode::Sum => h.add(&skip)?,
            };
            h = dec.forward(&input)?;
        }
        let (_, c_out, f_out) = h.dims3()?;
        let out = h.reshape((b, n, c_out, f_out))?.permute((0, 2, 3, 1))?.contiguous()?;
        Ok(match &std {
            Some(sd) => out.broadcast_mul(sd)?,
            None => out,
        })
    }

    /// Encoder output `(B·N, C_L, F_L)`.
    pub fn encode(&self, x: &Tensor) -> Result<Tensor> {
        let (b, c, f, n) = x.dims4()?;
        let x = if self.cfg.normalize_input { x.broadcast_div(&example_std(x)?)? } else { x.clone() };
        let mut h = x.permute((0, 3, 1, 2))?.reshape((b * n, c, f))?;
        for enc in &self.encoders {
            h = enc.forward(&h, n)?;
        }
        Ok(h)
    }
}

impl SpectrogramModel for AeroModel {
    fn forward_cac(&self, x: &Tensor) -> Result<Tensor> {
        self.forward(x)
    }
    fn dtype(&self) -> DType {
        self.dtype
    }
    fn device(&self) -> Device {
        self.device.clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ModelConfig {
        ModelConfig {
            base_channels: 8,
            freq_bins: 64,
            attention_window: 4,
            ..ModelConfig::default()
        }
    }

    #[test]
    fn default_latent_is_64_fold_smaller() {
        let cfg = ModelConfig::default();
        cfg.validate().unwrap();
        assert_eq!(cfg.latent_bins(), 4);
    }

    #[test]
    fn indivisible_bins_mention_nyquist() {
        let cfg = ModelConfig { freq_bins: 257, ..ModelConfig::default() };
        let e = cfg.validate().unwrap_err().to_string();
        assert!(e.contains("Nyquist"), "{e}");
    }

    #[test]
    fn shape_preserved_for_various_frame_counts() {
        let model = AeroModel::build(&small(), 0, DType::F32, &Device::Cpu).unwrap();
        for n in [1, 7, 13] {
            let x = Tensor::randn(0f32, 1.0, (1, 2, 64, n), &Device::Cpu).unwrap();
            let y = model.forward(&x).unwrap();
            assert_eq!(y.dims(), x.dims());
        }
        let latent = model
            .encode(&Tensor::zeros((1, 2, 64, 3), DType::F32, &Device::Cpu).unwrap())
            .unwrap();
        assert_eq!(latent.dims(), &[3, 64, 1]);
    }

    #[test]
    fn same_seed_same_bytes() {
        let a = AeroModel::build(&small(), 11, DType::F32, &Device::Cpu).unwrap();
        let b = AeroModel::build(&small(), 11, DType::F32, &Device::Cpu).unwrap();
        let c = AeroModel::build(&small(), 12, DType::F32, &Device::Cpu).unwrap();
        assert_eq!(a.params().to_bytes().unwrap(), b.params().to_bytes().unwrap());
        assert_ne!(a.params().to_bytes().unwrap(), c.params().to_bytes().unwrap());
        assert_eq!(a.parameter_summary(), b.parameter_summary());
    }

    #[test]
    fn rebinding_parameters_reproduces_output() {
        let cfg = small();
        let a = AeroModel::build(&cfg, 3, DType::F32, &Device::Cpu).unwrap();
        let b = AeroModel::from_params(&cfg, a.params()).unwrap();
        let x = Tensor::randn(0f32, 1.0, (2, 2, 64, 5), &Device::Cpu).unwrap();
        let ya = a.forward(&x).unwrap().flatten_all().unwrap().to_vec1::<f32>().unwrap();
        let yb = b.forward(&x).unwrap().flatten_all().unwrap().to_vec1::<f32>().unwrap();
        assert_eq!(ya, yb);
        let other = ModelConfig { use_ftb: false, ..cfg };
        assert!(AeroModel::from_params(&other, a.params()).is_err());
    }

    #[test]
    fn ftb_rejects_wrong_bins() {
        let pb = ParamBuilder::for_init(0, DType::F32, &Device::Cpu);
        let ftb = Ftb::new(&pb, 4, 16, 5, 9).unwrap();
        let x = Tensor::zeros((2, 4, 8), DType::F32, &Device::Cpu).unwrap();
        assert!(ftb.forward(&x).is_err());
    }

    #[test]
    fn bottleneck_placement_builds() {
        let cfg = ModelConfig { sequence_placement: SequencePlacement::Bottleneck, ..small() };
        let model = AeroModel::build(&cfg, 0, DType::F32, &Device::Cpu).unwrap();
        assert!(model.params().names().any(|n| n.starts_with("bottleneck.")));
        assert!(!model.params().names().any(|n| n.contains(".seq.")));
        let x = Tensor::randn(0f32, 1.0, (1, 2, 64, 4), &Device::Cpu).unwrap();
        assert_eq!(model.forward(&x).unwrap().dims(), &[1, 2, 64, 4]);
    }
}
