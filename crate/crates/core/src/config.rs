//! Experiment configuration: a TOML document with `[transform]`, `[model]`,
//! `[discriminator]`, `[loss]`, `[train]` and `[data]` sections, dotted-key
//! overrides and the named presets.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::discriminator::DiscriminatorConfig;
use crate::dsp::{make_transform_pair, sinc_resample, OverlapRatio, Sample, SpectroTransformSpec, WaveSignal};
use crate::error::{AeroError, Result};
use crate::losses::{AdversarialKind, LossWeights};
use crate::model::ModelConfig;

/// Where the rate change happens.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum UpsamplingDomain {
    /// Shortened analysis STFT at the low rate, full synthesis at the high rate.
    #[default]
    Spectral,
    /// Sinc interpolation to the high rate first, then one STFT pair there.
    Time,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TransformConfig {
    pub source_rate: u32,
    pub target_rate: u32,
    pub fft_size: usize,
    pub overlap_ratio: OverlapRatio,
    pub upsampling: UpsamplingDomain,
}

impl Default for TransformConfig {
    fn default() -> Self {
        Self {
            source_rate: 8000,
            target_rate: 16000,
            fft_size: 512,
            overlap_ratio: OverlapRatio::QUARTER,
            upsampling: UpsamplingDomain::Spectral,
        }
    }
}

impl TransformConfig {
    pub fn scale(&self) -> Result<usize> {
        if self.source_rate == 0 || self.target_rate % self.source_rate != 0 || self.target_rate < self.source_rate {
            return Err(AeroError::Config(format!(
                "transform: target rate {} is not an integer multiple of source rate {}",
                self.target_rate, self.source_rate
            )));
        }
        Ok((self.target_rate / self.source_rate) as usize)
    }

    /// Transform pair applied to the model input. In the time domain the
    /// pair has scale 1 and runs at the target rate.
    pub fn spec(&self) -> Result<SpectroTransformSpec> {
        let scale = match self.upsampling {
            UpsamplingDomain::Spectral => self.scale()?,
            UpsamplingDomain::Time => {
                self.scale()?;
                1
            }
        };
        Ok(make_transform_pair(scale, self.fft_size, self.overlap_ratio)?)
    }

    /// Low-rate waveform as fed to the transform pair.
    pub fn model_input<T: Sample>(&self, lr: &WaveSignal<T>) -> Result<WaveSignal<T>> {
        match self.upsampling {
            UpsamplingDomain::Spectral => Ok(lr.clone()),
            UpsamplingDomain::Time => Ok(sinc_resample(lr, self.target_rate)?),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    pub lambda_spectral: f64,
    pub lambda_adv: f64,
    pub lambda_feat: f64,
    pub adversarial: AdversarialKind,
}

impl Default for LossConfig {
    fn default() -> Self {
        let w = LossWeights::default();
        Self {
            lambda_spectral: w.lambda_spectral,
            lambda_adv: w.lambda_adv,
            lambda_feat: w.lambda_feat,
            adversarial: AdversarialKind::Hinge,
        }
    }
}

impl LossConfig {
    pub fn weights(&self) -> LossWeights {
        LossWeights { lambda_spectral: self.lambda_spectral, lambda_adv: self.lambda_adv, lambda_feat: self.lambda_feat }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub total_steps: u64,
    pub batch_size: usize,
    pub lr_g: f64,
    pub lr_d: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub grad_clip: f64,
    pub seed: u64,
    pub device: String,
    /// `f32` or `f64`.
    pub dtype: String,
    pub log_every: u64,
    pub ckpt_every: u64,
    /// Discriminator updated on every n-th step.
    pub disc_update_every: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            total_steps: 2000,
            batch_size: 16,
            lr_g: 3e-4,
            lr_d: 3e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            grad_clip: 5.0,
            seed: 0,
            device: "cpu".into(),
            dtype: "f32".into(),
            log_every: 10,
            ckpt_every: 500,
            disc_update_every: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Corpus {
    #[default]
    Vctk,
    Musdb,
    Plain,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub root: String,
    pub pattern: String,
    pub corpus: Corpus,
    pub cache_dir: String,
    pub chunk_seconds: f64,
    pub hop_seconds: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            root: "data".into(),
            pattern: "*.wav".into(),
            corpus: Corpus::Vctk,
            cache_dir: "cache".into(),
            chunk_seconds: 0.5,
            hop_seconds: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct AeroConfig {
    pub transform: TransformConfig,
    pub model: ModelConfig,
    pub discriminator: DiscriminatorConfig,
    pub loss: LossConfig,
    pub train: TrainConfig,
    pub data: DataConfig,
}

impl AeroConfig {
    pub fn validate(&self) -> Result<()> {
        let spec = self.transform.spec()?;
        if self.model.freq_bins != spec.fft_size / 2 {
            return Err(AeroError::Config(format!(
                "model.freq_bins = {} but transform.fft_size = {} feeds {} bins",
                self.model.freq_bins,
                spec.fft_size,
                spec.fft_size / 2
            )));
        }
        self.model.validate()?;
        self.discriminator.validate()?;
        self.loss.weights().validate()?;
        let t = &self.train;
        if t.batch_size == 0 || !(t.lr_g > 0.0) || !(t.lr_d > 0.0) || !(t.grad_clip > 0.0) || t.disc_update_every == 0 {
            return Err(AeroError::Config(
                "train: batch_size, learning rates, grad_clip and disc_update_every must be positive".into(),
            ));
        }
        if !(0.0..1.0).contains(&t.beta1) || !(0.0..1.0).contains(&t.beta2) || !(t.eps > 0.0) {
            return Err(AeroError::Config("train: betas must lie in [0, 1) and eps be positive".into()));
        }
        if t.device != "cpu" {
            return Err(AeroError::Config(format!("train: device {:?} not available in this build (cpu only)", t.device)));
        }
        if t.dtype != "f32" && t.dtype != "f64" {
            return Err(AeroError::Config(format!("train: dtype {:?} must be f32 or f64", t.dtype)));
        }
        Ok(())
    }

    pub fn dtype(&self) -> candle_core::DType {
        if self.train.dtype == "f64" {
            candle_core::DType::F64
        } else {
            candle_core::DType::F32
        }
    }

    /// Parses TOML. `model.freq_bins` follows `transform.fft_size` unless
    /// given explicitly.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let value: toml::Table = text.parse().map_err(|e| AeroError::Config(format!("config: {e}")))?;
        Self::from_table(value)
    }

    fn from_table(table: toml::Table) -> Result<Self> {
        let explicit_bins = table
            .get("model")
            .and_then(|m| m.as_table())
            .is_some_and(|m| m.contains_key("freq_bins"));
        check_keys(&toml::Value::Table(table.clone()))?;
        let mut cfg: AeroConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| AeroError::Config(format!("config: {e}")))?;
        if !explicit_bins {
            cfg.model.freq_bins = cfg.transform.fft_size / 2;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| AeroError::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| AeroError::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| AeroError::Config(format!("config serialisation: {e}")))
    }

    /// Every settable dotted key.
    pub fn keys() -> Vec<String> {
        let v = toml::Value::try_from(AeroConfig::default()).expect("default config serialises");
        let mut out = Vec::new();
        collect_keys(&v, "", &mut out);
        out
    }

    /// Applies `section.key=value` overrides. Unknown keys are rejected
    /// with the closest valid key as a suggestion.
    pub fn with_overrides<S: AsRef<str>>(&self, overrides: &[S]) -> Result<Self> {
        let mut root = toml::Value::try_from(self)
            .map_err(|e| AeroError::Config(format!("config serialisation: {e}")))?;
        let mut bins_set = false;
        let mut fft_set = false;
        for o in overrides {
            let o = o.as_ref();
            let (key, raw) = o
                .split_once('=')
                .ok_or_else(|| AeroError::Config(format!("override {o:?} is not of the form key=value")))?;
            let key = key.trim();
            bins_set |= key == "model.freq_bins";
            fft_set |= key == "transform.fft_size";
            let slot = lookup_mut(&mut root, key)?;
            *slot = parse_override(raw.trim(), slot);
        }
        let table = match root {
            toml::Value::Table(t) => t,
            _ => unreachable!("config serialises to a table"),
        };
        let mut cfg: AeroConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| AeroError::Config(format!("override: {e}")))?;
        if fft_set && !bins_set {
            cfg.model.freq_bins = cfg.transform.fft_size / 2;
        }
        Ok(cfg)
    }
}

fn collect_keys(v: &toml::Value, prefix: &str, out: &mut Vec<String>) {
    if let toml::Value::Table(t) = v {
        for (k, child) in t {
            let name = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
            if child.is_table() {
                collect_keys(child, &name, out);
            } else {
                out.push(name);
            }
        }
    }
}

/// Closest valid key by normalised Levenshtein similarity.
pub fn suggest_key(key: &str) -> Option<String> {
    AeroConfig::keys()
        .into_iter()
        .map(|k| {
            let leaf = k.rsplit('.').next().unwrap_or(&k).to_string();
            let score = strsim::normalized_levenshtein(key, &k).max(strsim::normalized_levenshtein(key, &leaf));
            (score, k)
        })
        .filter(|(s, _)| *s > 0.4)
        .max_by(|a, b| a.0.total_cmp(&b.0))
        .map(|(_, k)| k)
}

fn unknown_key(key: &str) -> AeroError {
    match suggest_key(key) {
        Some(s) => AeroError::Config(format!("unknown config key {key:?}; did you mean {s:?}?")),
        None => AeroError::Config(format!("unknown config key {key:?}")),
    }
}

fn check_keys(v: &toml::Value) -> Result<()> {
    let valid = AeroConfig::keys();
    let mut given = Vec::new();
    collect_keys(v, "", &mut given);
    for k in given {
        if !valid.contains(&k) {
            return Err(unknown_key(&k));
        }
    }
    Ok(())
}

fn lookup_mut<'a>(root: &'a mut toml::Value, key: &str) -> Result<&'a mut toml::Value> {
    let mut cur = root;
    for part in key.split('.') {
        cur = match cur {
            toml::Value::Table(t) => t.get_mut(part).ok_or_else(|| unknown_key(key))?,
            _ => return Err(unknown_key(key)),
        };
    }
    if cur.is_table() {
        return Err(AeroError::Config(format!("{key:?} names a section, not a value")));
    }
    Ok(cur)
}

fn parse_override(raw: &str, current: &toml::Value) -> toml::Value {
    let parsed = format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"));
    match (parsed, current) {
        (Some(toml::Value::Integer(i)), toml::Value::Float(_)) => toml::Value::Float(i as f64),
        (Some(v), _) => v,
        (None, _) => toml::Value::String(raw.to_string()),
    }
}

/// Rate settings shipped as presets: (name, source Hz, target Hz).
pub const PRESET_RATES: [(&str, u32, u32); 4] =
    [("8-16", 8000, 16000), ("8-24", 8000, 24000), ("4-16", 4000, 16000), ("11-44", 11025, 44100)];

/// Names of all shipped presets, e.g. `8-16_128-512`.
pub fn preset_names() -> Vec<String> {
    let mut out = Vec::new();
    for (rates, _, _) in PRESET_RATES {
        for hop in [64, 128, 256] {
            out.push(format!("{rates}_{hop}-512"));
        }
    }
    out.push("12-48_256-1024".into());
    out
}

/// Built-in configuration named `<rates>_<hop>-<window>`.
pub fn preset(name: &str) -> Result<AeroConfig> {
    let (rates, frame) = name
        .split_once('_')
        .ok_or_else(|| AeroError::Config(format!("unknown preset {name:?}; known: {}", preset_names().join(", "))))?;
    if !preset_names().iter().any(|n| n == name) {
        return Err(AeroError::Config(format!("unknown preset {name:?}; known: {}", preset_names().join(", "))));
    }
    let (source_rate, target_rate) = match rates {
        "12-48" => (12000, 48000),
        _ => PRESET_RATES
            .iter()
            .find(|(n, _, _)| *n == rates)
            .map(|(_, s, t)| (*s, *t))
            .expect("validated above"),
    };
    let (hop, win) = frame.split_once('-').expect("validated above");
    let hop: usize = hop.parse().expect("validated above");
    let win: usize = win.parse().expect("validated above");
    let mut cfg = AeroConfig::default();
    cfg.transform = TransformConfig {
        source_rate,
        target_rate,
        fft_size: win,
        overlap_ratio: OverlapRatio::new(hop, win)?,
        upsampling: UpsamplingDomain::Spectral,
    };
    cfg.model.freq_bins = win / 2;
    cfg.train.batch_size = if target_rate > 44100 { 8 } else { 16 };
    cfg.data.corpus = if target_rate == 44100 { Corpus::Musdb } else { Corpus::Vctk };
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trips_through_toml() {
        let cfg = AeroConfig::default();
        let text = cfg.to_toml_string().unwrap();
        assert_eq!(AeroConfig::from_toml_str(&text).unwrap(), cfg);
        cfg.validate().unwrap();
    }

    #[test]
    fn thirteen_presets_validate() {
        let names = preset_names();
        assert_eq!(names.len(), 13);
        for n in &names {
            let cfg = preset(n).unwrap();
            cfg.validate().unwrap_or_else(|e| panic!("{n}: {e}"));
        }
        let p = preset("12-48_256-1024").unwrap();
        assert_eq!((p.train.batch_size, p.model.freq_bins), (8, 512));
        let spec = preset("8-16_128-512").unwrap().transform.spec().unwrap();
        assert_eq!((spec.synthesis.hop_length, spec.analysis.hop_length), (128, 64));
    }

    #[test]
    fn overrides_apply_and_coerce() {
        let cfg = AeroConfig::default()
            .with_overrides(&["train.lr_g=1", "model.use_ftb=false", "transform.fft_size=1024", "data.root=/tmp/x"])
            .unwrap();
        assert_eq!(cfg.train.lr_g, 1.0);
        assert!(!cfg.model.use_ftb);
        assert_eq!(cfg.model.freq_bins, 512);
        assert_eq!(cfg.data.root, "/tmp/x");
        let cfg = AeroConfig::default().with_overrides(&["transform.overlap_ratio=1/8"]).unwrap();
        assert_eq!(cfg.transform.overlap_ratio, OverlapRatio::EIGHTH);
    }

    #[test]
    fn unknown_key_suggests_nearest() {
        let e = AeroConfig::default().with_overrides(&["train.lr_gg=1"]).unwrap_err().to_string();
        assert!(e.contains("train.lr_g"), "{e}");
        let e = AeroConfig::from_toml_str("[model]\nbase_chanels = 4\n").unwrap_err().to_string();
        assert!(e.contains("model.base_channels"), "{e}");
    }

    #[test]
    fn bad_values_are_config_errors() {
        assert!(AeroConfig::default().with_overrides(&["train.batch_size=abc"]).is_err());
        let cfg = AeroConfig::default().with_overrides(&["model.freq_bins=128"]).unwrap();
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn time_domain_resamples_before_a_unit_scale_pair() {
        let mut t = TransformConfig::default();
        t.upsampling = UpsamplingDomain::Time;
        let spec = t.spec().unwrap();
        assert_eq!(spec.scale, 1);
        let lr = WaveSignal::<f64>::new(vec![0.0; 800], 8000).unwrap();
        let x = t.model_input(&lr).unwrap();
        assert_eq!((x.len(), x.sample_rate()), (1600, 16000));
        let cfg = AeroConfig::default().with_overrides(&["transform.upsampling=time"]).unwrap();
        assert_eq!(cfg.transform.upsampling, UpsamplingDomain::Time);
    }
}
