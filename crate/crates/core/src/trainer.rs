//! Optimisation loop: Adam on generator and discriminator, seeded batch
//! order, JSON-lines logs and resumable checkpoints.

use std::collections::{BTreeMap, HashMap};
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use candle_core::backprop::GradStore;
use candle_core::{DType, Device, Tensor};
use log::{info, warn};
use serde::{Deserialize, Serialize};

use crate::config::AeroConfig;
use crate::data::{ChunkSet, TrainChunk};
use crate::discriminator::MultiScaleDiscriminator;
use crate::error::{AeroError, Result};
use crate::losses::{discriminator_loss, logits, total_generator_loss, LossReport, SpectralLoss};
use crate::model::AeroModel;
use crate::params::ParameterSet;
use crate::pipeline::TensorPipeline;

pub const CHECKPOINT_FORMAT: &str = "aero-checkpoint";
pub const CHECKPOINT_VERSION: &str = "1";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub grad_clip: f64,
}

/// Adam moments for one parameter set.
#[derive(Debug, Clone, Default)]
pub struct AdamState {
    pub t: u64,
    pub m: BTreeMap<String, Tensor>,
    pub v: BTreeMap<String, Tensor>,
}

#[derive(Debug, Clone)]
pub struct Adam {
    pub cfg: AdamConfig,
    pub state: AdamState,
}

/// L2 norm over all gradients of `params`; missing gradients count as zero.
pub fn global_grad_norm(params: &ParameterSet, grads: &GradStore) -> Result<f64> {
    let mut total = 0.0;
    for (_, var) in params.iter() {
        if let Some(g) = grads.get(var.as_tensor()) {
            total += g.sqr()?.sum_all()?.to_dtype(DType::F64)?.to_scalar::<f64>()?;
        }
    }
    Ok(total.sqrt())
}

impl Adam {
    pub fn new(cfg: AdamConfig) -> Self {
        Self { cfg, state: AdamState::default() }
    }

    /// Clips to the configured global norm and applies one update. Returns
    /// the norm before clipping.
    pub fn step(&mut self, params: &ParameterSet, grads: &GradStore) -> Result<f64> {
        let norm = global_grad_norm(params, grads)?;
        if !norm.is_finite() {
            return Ok(norm);
        }
        let clip = if norm > self.cfg.grad_clip { self.cfg.grad_clip / (norm + 1e-6) } else { 1.0 };
        self.state.t += 1;
        let t = self.state.t as i32;
        let c1 = 1.0 - self.cfg.beta1.powi(t);
        let c2 = 1.0 - self.cfg.beta2.powi(t);
        for (name, var) in params.iter() {
            let g = match grads.get(var.as_tensor()) {
                Some(g) => g.affine(clip, 0.0)?,
                None => var.as_tensor().zeros_like()?,
            };
            let m = match self.state.m.get(name) {
                Some(m) => m.affine(self.cfg.beta1, 0.0)?.add(&g.affine(1.0 - self.cfg.beta1, 0.0)?)?,
                None => g.affine(1.0 - self.cfg.beta1, 0.0)?,
            };
            let g2 = g.sqr()?;
            let v = match self.state.v.get(name) {
                Some(v) => v.affine(self.cfg.beta2, 0.0)?.add(&g2.affine(1.0 - self.cfg.beta2, 0.0)?)?,
                None => g2.affine(1.0 - self.cfg.beta2, 0.0)?,
            };
            let denom = v.affine(1.0 / c2, 0.0)?.sqrt()?.affine(1.0, self.cfg.eps)?;
            let delta = m.affine(self.cfg.lr / c1, 0.0)?.div(&denom)?;
            var.set(&var.as_tensor().sub(&delta)?.detach())?;
            self.state.m.insert(name.clone(), m.detach());
            self.state.v.insert(name.clone(), v.detach());
        }
        Ok(norm)
    }
}

/// Batch sampling position: batches are a pure function of `(seed, cursor)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SamplerState {
    pub seed: u64,
    /// Chunks consumed so far across epochs.
    pub cursor: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub step: u64,
    #[serde(flatten)]
    pub report: LossReport,
    pub grad_norm_g: f64,
    pub grad_norm_d: f64,
}

/// Everything needed to resume training bit-for-bit.
#[derive(Debug)]
pub struct Checkpoint {
    pub step: u64,
    pub config: AeroConfig,
    pub generator: ParameterSet,
    pub discriminator: ParameterSet,
    pub opt_g: AdamState,
    pub opt_d: AdamState,
    pub sampler: SamplerState,
}

fn tensor_bytes(t: &Tensor) -> Result<Vec<u8>> {
    let v = t.flatten_all()?.to_dtype(DType::F64)?.to_vec1::<f64>()?;
    Ok(v.iter().flat_map(|x| x.to_le_bytes()).collect())
}

fn maps_equal(a: &BTreeMap<String, Tensor>, b: &BTreeMap<String, Tensor>) -> Result<bool> {
    if a.len() != b.len() {
        return Ok(false);
    }
    for ((ka, ta), (kb, tb)) in a.iter().zip(b) {
        if ka != kb || ta.dims() != tb.dims() || tensor_bytes(ta)? != tensor_bytes(tb)? {
            return Ok(false);
        }
    }
    Ok(true)
}

impl Checkpoint {
    /// Field-by-field equality, comparing arrays by value.
    pub fn same_as(&self, other: &Checkpoint) -> Result<bool> {
        Ok(self.step == other.step
            && self.config == other.config
            && self.sampler == other.sampler
            && self.opt_g.t == other.opt_g.t
            && self.opt_d.t == other.opt_d.t
            && maps_equal(&self.generator.tensors(), &other.generator.tensors())?
            && maps_equal(&self.discriminator.tensors(), &other.discriminator.tensors())?
            && maps_equal(&self.opt_g.m, &other.opt_g.m)?
            && maps_equal(&self.opt_g.v, &other.opt_g.v)?
            && maps_equal(&self.opt_d.m, &other.opt_d.m)?
            && maps_equal(&self.opt_d.v, &other.opt_d.v)?)
    }
}

fn ckpt_err(path: &Path, reason: impl Into<String>) -> AeroError {
    AeroError::Checkpoint { path: path.display().to_string(), reason: reason.into() }
}

/// Writes atomically via a temporary file in the target directory.
pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    let mut tensors: Vec<(String, Tensor)> = Vec::new();
    for (k, t) in ckpt.generator.tensors() {
        tensors.push((format!("gen.{k}"), t));
    }
    for (k, t) in ckpt.discriminator.tensors() {
        tensors.push((format!("disc.{k}"), t));
    }
    for (prefix, st) in [("opt_g", &ckpt.opt_g), ("opt_d", &ckpt.opt_d)] {
        for (k, t) in &st.m {
            tensors.push((format!("{prefix}.m.{k}"), t.contiguous()?));
        }
        for (k, t) in &st.v {
            tensors.push((format!("{prefix}.v.{k}"), t.contiguous()?));
        }
    }
    let tensors: Vec<(String, Tensor)> = tensors
        .into_iter()
        .map(|(k, t)| Ok((k, t.contiguous()?)))
        .collect::<Result<_>>()?;
    let mut meta = HashMap::new();
    meta.insert("format".to_string(), CHECKPOINT_FORMAT.to_string());
    meta.insert("format_version".to_string(), CHECKPOINT_VERSION.to_string());
    meta.insert("step".to_string(), ckpt.step.to_string());
    meta.insert("config".to_string(), ckpt.config.to_toml_string()?);
    meta.insert("sampler".to_string(), serde_json::to_string(&ckpt.sampler)?);
    meta.insert("opt_g_t".to_string(), ckpt.opt_g.t.to_string());
    meta.insert("opt_d_t".to_string(), ckpt.opt_d.t.to_string());
    meta.insert("param_version".to_string(), ckpt.generator.version().to_string());
    let bytes = safetensors::serialize(tensors.iter().map(|(k, t)| (k.as_str(), t)), Some(meta))
        .map_err(|e| ckpt_err(path, format!("serialise: {e}")))?;
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d.to_path_buf(),
        _ => PathBuf::from("."),
    };
    fs::create_dir_all(&dir).map_err(|e| AeroError::io(&dir, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(&dir).map_err(|e| AeroError::io(&dir, e))?;
    tmp.write_all(&bytes).map_err(|e| AeroError::io(path, e))?;
    tmp.as_file().sync_all().map_err(|e| AeroError::io(path, e))?;
    tmp.persist(path).map_err(|e| AeroError::io(path, e.error))?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| AeroError::io(path, e))?;
    let st = safetensors::SafeTensors::deserialize(&bytes)
        .map_err(|e| ckpt_err(path, format!("not a complete checkpoint file: {e}")))?;
    let (_, header) = safetensors::SafeTensors::read_metadata(&bytes)
        .map_err(|e| ckpt_err(path, format!("unreadable header: {e}")))?;
    let meta = header.metadata().clone().unwrap_or_default();
    let get = |k: &str| meta.get(k).ok_or_else(|| ckpt_err(path, format!("metadata key {k:?} missing")));
    if get("format")? != CHECKPOINT_FORMAT {
        return Err(ckpt_err(path, format!("format {:?} is not {CHECKPOINT_FORMAT:?}", get("format")?)));
    }
    if get("format_version")? != CHECKPOINT_VERSION {
        return Err(ckpt_err(
            path,
            format!("format version {} unsupported (expected {CHECKPOINT_VERSION})", get("format_version")?),
        ));
    }
    let known_meta = ["format", "format_version", "step", "config", "sampler", "opt_g_t", "opt_d_t", "param_version"];
    for k in meta.keys() {
        if !known_meta.contains(&k.as_str()) {
            warn!("{}: ignoring unknown metadata key {k:?}", path.display());
        }
    }
    let parse_u64 = |k: &str| -> Result<u64> {
        get(k)?.parse().map_err(|e| ckpt_err(path, format!("metadata {k}: {e}")))
    };
    let step = parse_u64("step")?;
    let config = AeroConfig::from_toml_str(get("config")?).map_err(|e| ckpt_err(path, e.to_string()))?;
    let sampler: SamplerState =
        serde_json::from_str(get("sampler")?).map_err(|e| ckpt_err(path, format!("sampler: {e}")))?;

    let mut gen = Vec::new();
    let mut disc = Vec::new();
    let mut opt_g = AdamState { t: parse_u64("opt_g_t")?, ..Default::default() };
    let mut opt_d = AdamState { t: parse_u64("opt_d_t")?, ..Default::default() };
    for name in st.names() {
        use candle_core::safetensors::Load;
        let view = st.tensor(name).map_err(|e| ckpt_err(path, e.to_string()))?;
        let t = view.load(&Device::Cpu)?;
        let name = name.to_string();
        if let Some(k) = name.strip_prefix("gen.") {
            gen.push((k.to_string(), t));
        } else if let Some(k) = name.strip_prefix("disc.") {
            disc.push((k.to_string(), t));
        } else if let Some(k) = name.strip_prefix("opt_g.m.") {
            opt_g.m.insert(k.to_string(), t);
        } else if let Some(k) = name.strip_prefix("opt_g.v.") {
            opt_g.v.insert(k.to_string(), t);
        } else if let Some(k) = name.strip_prefix("opt_d.m.") {
            opt_d.m.insert(k.to_string(), t);
        } else if let Some(k) = name.strip_prefix("opt_d.v.") {
            opt_d.v.insert(k.to_string(), t);
        } else {
            warn!("{}: ignoring unknown array {name:?}", path.display());
        }
    }
    if gen.is_empty() {
        return Err(ckpt_err(path, "no generator arrays"));
    }
    Ok(Checkpoint {
        step,
        config,
        generator: ParameterSet::from_tensors(gen).map_err(|e| ckpt_err(path, e.to_string()))?,
        discriminator: ParameterSet::from_tensors(disc).map_err(|e| ckpt_err(path, e.to_string()))?,
        opt_g,
        opt_d,
        sampler,
    })
}

/// Loads only the generator and its configuration.
pub fn load_generator(path: &Path) -> Result<(AeroConfig, AeroModel)> {
    let ckpt = load_checkpoint(path)?;
    let model = AeroModel::from_params(&ckpt.config.model, &ckpt.generator)?;
    Ok((ckpt.config, model))
}

#[derive(Debug, Clone, Default)]
pub struct FitOptions {
    pub checkpoint_dir: Option<PathBuf>,
    pub log_path: Option<PathBuf>,
}

/// Owns both networks, their optimisers and the data cursor.
pub struct Trainer {
    cfg: AeroConfig,
    generator: AeroModel,
    discriminator: MultiScaleDiscriminator,
    opt_g: Adam,
    opt_d: Adam,
    pipeline: TensorPipeline,
    spectral: SpectralLoss,
    step: u64,
    sampler: SamplerState,
    dtype: DType,
    device: Device,
    epoch_cache: Option<(u64, Vec<usize>)>,
}

fn adam_cfgs(cfg: &AeroConfig) -> (AdamConfig, AdamConfig) {
    let t = &cfg.train;
    let base = AdamConfig { lr: t.lr_g, beta1: t.beta1, beta2: t.beta2, eps: t.eps, grad_clip: t.grad_clip };
    (base, AdamConfig { lr: t.lr_d, ..base })
}

impl Trainer {
    pub fn new(cfg: &AeroConfig) -> Result<Self> {
        cfg.validate()?;
        let dtype = cfg.dtype();
        let device = Device::Cpu;
        let seed = cfg.train.seed;
        let generator = AeroModel::build(&cfg.model, seed, dtype, &device)?;
        let discriminator = MultiScaleDiscriminator::build(&cfg.discriminator, seed.wrapping_add(1), dtype, &device)?;
        let (ag, ad) = adam_cfgs(cfg);
        Ok(Self {
            pipeline: TensorPipeline::new(cfg.transform.spec()?, dtype, &device)?,
            spectral: SpectralLoss::standard(dtype, &device)?,
            cfg: cfg.clone(),
            generator,
            discriminator,
            opt_g: Adam::new(ag),
            opt_d: Adam::new(ad),
            step: 0,
            sampler: SamplerState { seed, cursor: 0 },
            dtype,
            device,
            epoch_cache: None,
        })
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let cfg = &ckpt.config;
        cfg.validate()?;
        let dtype = cfg.dtype();
        let device = Device::Cpu;
        let cast = |p: &ParameterSet| -> Result<ParameterSet> {
            ParameterSet::from_tensors(
                p.tensors().into_iter().map(|(k, t)| Ok((k, t.to_dtype(dtype)?))).collect::<Result<Vec<_>>>()?,
            )
        };
        let generator = AeroModel::from_params(&cfg.model, &cast(&ckpt.generator)?)?;
        let discriminator = MultiScaleDiscriminator::from_params(&cfg.discriminator, &cast(&ckpt.discriminator)?)?;
        let (ag, ad) = adam_cfgs(cfg);
        let restore = |st: &AdamState| -> Result<AdamState> {
            let conv = |m: &BTreeMap<String, Tensor>| -> Result<BTreeMap<String, Tensor>> {
                m.iter().map(|(k, t)| Ok((k.clone(), t.to_dtype(dtype)?))).collect()
            };
            Ok(AdamState { t: st.t, m: conv(&st.m)?, v: conv(&st.v)? })
        };
        Ok(Self {
            pipeline: TensorPipeline::new(cfg.transform.spec()?, dtype, &device)?,
            spectral: SpectralLoss::standard(dtype, &device)?,
            cfg: cfg.clone(),
            generator,
            discriminator,
            opt_g: Adam { cfg: ag, state: restore(&ckpt.opt_g)? },
            opt_d: Adam { cfg: ad, state: restore(&ckpt.opt_d)? },
            step: ckpt.step,
            sampler: ckpt.sampler,
            dtype,
            device,
            epoch_cache: None,
        })
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn config(&self) -> &AeroConfig {
        &self.cfg
    }

    pub fn generator(&self) -> &AeroModel {
        &self.generator
    }

    pub fn discriminator(&self) -> &MultiScaleDiscriminator {
        &self.discriminator
    }

    pub fn pipeline(&self) -> &TensorPipeline {
        &self.pipeline
    }

    /// Independent snapshot of the full training state.
    pub fn checkpoint(&self) -> Result<Checkpoint> {
        Ok(Checkpoint {
            step: self.step,
            config: self.cfg.clone(),
            generator: self.generator.params().deep_clone()?,
            discriminator: self.discriminator.params().deep_clone()?,
            opt_g: self.opt_g.state.clone(),
            opt_d: self.opt_d.state.clone(),
            sampler: self.sampler,
        })
    }

    fn batch_tensor(&self, waves: impl Iterator<Item = Vec<f32>>, len: usize) -> Result<Tensor> {
        let mut flat = Vec::new();
        let mut rows = 0;
        for w in waves {
            if w.len() != len {
                return Err(AeroError::Data(format!("batch rows differ in length ({} vs {len})", w.len())));
            }
            flat.extend(w);
            rows += 1;
        }
        Ok(Tensor::from_vec(flat, (rows, len), &self.device)?.to_dtype(self.dtype)?)
    }

    /// One discriminator update on `(y, ŷ.detach())` followed by one
    /// generator update on the weighted objective.
    pub fn train_step(&mut self, batch: &[TrainChunk]) -> Result<StepLog> {
        let first = batch.first().ok_or_else(|| AeroError::Data("empty batch".into()))?;
        let inputs = batch
            .iter()
            .map(|c| self.cfg.transform.model_input(&c.lr))
            .collect::<Result<Vec<_>>>()?;
        let lr = self.batch_tensor(inputs.iter().map(|w| w.samples().to_vec()), inputs[0].len())?;
        let hr = self.batch_tensor(batch.iter().map(|c| c.hr.samples().to_vec()), first.hr.len())?;
        let next = self.step + 1;
        let weights = self.cfg.loss.weights();
        let kind = self.cfg.loss.adversarial;

        let yhat = self.pipeline.run(&self.generator, &lr)?;

        let mut grad_norm_d = 0.0;
        let mut d_loss_value = None;
        if weights.uses_discriminator() && next % self.cfg.train.disc_update_every == 0 {
            let real = self.discriminator.forward(&hr)?;
            let fake = self.discriminator.forward(&yhat.detach())?;
            let loss_d = discriminator_loss(&logits(&real), &logits(&fake), kind)?;
            let value = loss_d.to_dtype(DType::F64)?.to_scalar::<f64>()?;
            let grads = loss_d.backward()?;
            grad_norm_d = self.opt_d.step(self.discriminator.params(), &grads)?;
            if !value.is_finite() || !grad_norm_d.is_finite() {
                return Err(AeroError::Diverged {
                    step: next,
                    details: format!("discriminator loss {value}, grad norm {grad_norm_d}"),
                });
            }
            d_loss_value = Some(value);
        }

        let disc = weights.uses_discriminator().then_some(&self.discriminator);
        let (loss_g, mut report) = total_generator_loss(&hr, &yhat, disc, &self.spectral, &weights, kind)?;
        if let Some(v) = d_loss_value {
            report.total_d = v;
        }
        let grads = loss_g.backward()?;
        let grad_norm_g = global_grad_norm(self.generator.params(), &grads)?;
        let finite = [report.spectral_sc, report.spectral_mag, report.adversarial_g, report.feature_match, report.total_g]
            .iter()
            .all(|v| v.is_finite());
        if !finite || !grad_norm_g.is_finite() {
            return Err(AeroError::Diverged {
                step: next,
                details: format!(
                    "losses {} / grad norms g={grad_norm_g} d={grad_norm_d}",
                    serde_json::to_string(&report)?
                ),
            });
        }
        self.opt_g.step(self.generator.params(), &grads)?;
        self.step = next;
        Ok(StepLog { step: next, report, grad_norm_g, grad_norm_d })
    }

    fn chunk_at(&mut self, data: &ChunkSet, position: u64) -> Result<TrainChunk> {
        let n = data.len() as u64;
        let epoch = position / n;
        let order = match &self.epoch_cache {
            Some((e, o)) if *e == epoch => o,
            _ => {
                let o = data.epoch_order(self.sampler.seed, epoch);
                self.epoch_cache = Some((epoch, o));
                &self.epoch_cache.as_ref().expect("just set").1
            }
        };
        data.get(order[(position % n) as usize])
    }

    /// Next batch from the seeded order; advances the cursor.
    pub fn next_batch(&mut self, data: &ChunkSet) -> Result<Vec<TrainChunk>> {
        if data.is_empty() {
            return Err(AeroError::Data("dataset is empty".into()));
        }
        let bs = self.cfg.train.batch_size as u64;
        let start = self.sampler.cursor;
        let batch = (start..start + bs).map(|p| self.chunk_at(data, p)).collect::<Result<Vec<_>>>()?;
        self.sampler.cursor += bs;
        Ok(batch)
    }

    /// Trains until `until_step`, logging and checkpointing per the config.
    pub fn run(&mut self, data: &ChunkSet, until_step: u64, opts: &FitOptions) -> Result<Vec<StepLog>> {
        if data.is_empty() {
            return Err(AeroError::Data("dataset is empty".into()));
        }
        let mut log_file = match &opts.log_path {
            Some(p) => Some(
                OpenOptions::new()
                    .create(true)
                    .append(true)
                    .open(p)
                    .map_err(|e| AeroError::io(p, e))?,
            ),
            None => None,
        };
        let mut logs = Vec::new();
        while self.step < until_step {
            let batch = self.next_batch(data)?;
            let entry = self.train_step(&batch)?;
            let log_every = self.cfg.train.log_every.max(1);
            if entry.step % log_every == 0 || entry.step == 1 {
                info!(
                    "step {} total_g {:.5} sc {:.5} mag {:.5} total_d {:.5}",
                    entry.step, entry.report.total_g, entry.report.spectral_sc, entry.report.spectral_mag, entry.report.total_d
                );
                if let (Some(f), Some(p)) = (log_file.as_mut(), opts.log_path.as_ref()) {
                    writeln!(f, "{}", serde_json::to_string(&entry)?).map_err(|e| AeroError::io(p, e))?;
                }
            }
            logs.push(entry);
            if let Some(dir) = &opts.checkpoint_dir {
                let every = self.cfg.train.ckpt_every;
                if (every > 0 && self.step % every == 0) || self.step == until_step {
                    let ckpt = self.checkpoint()?;
                    save_checkpoint(&ckpt, &dir.join(format!("step_{:08}.safetensors", self.step)))?;
                    save_checkpoint(&ckpt, &dir.join("latest.safetensors"))?;
                }
            }
        }
        Ok(logs)
    }
}

#[derive(Debug)]
pub struct FitResult {
    pub checkpoint: Checkpoint,
    pub logs: Vec<StepLog>,
}

/// Trains from scratch for `cfg.train.total_steps` steps.
pub fn fit(cfg: &AeroConfig, data: &ChunkSet, opts: &FitOptions) -> Result<FitResult> {
    if data.is_empty() {
        return Err(AeroError::Data("dataset is empty".into()));
    }
    let mut trainer = Trainer::new(cfg)?;
    let logs = trainer.run(data, cfg.train.total_steps, opts)?;
    Ok(FitResult { checkpoint: trainer.checkpoint()?, logs })
}
