//! Named parameter storage and a builder that either initialises fresh
//! parameters from a seed or binds to an existing set by name.

use std::cell::RefCell;
use std::collections::BTreeMap;
use std::fmt;
use std::rc::Rc;

use candle_core::{DType, Device, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{AeroError, Result};

pub const PARAM_VERSION: &str = "aero-params-v1";

/// Ordered map of learnable arrays. Handles are shared: cloning a `Var`
/// aliases its storage, so use [`ParameterSet::deep_clone`] for a copy.
pub struct ParameterSet {
    version: String,
    vars: BTreeMap<String, Var>,
}

impl fmt::Debug for ParameterSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ParameterSet")
            .field("version", &self.version)
            .field("entries", &self.vars.len())
            .field("total", &self.total_count())
            .finish()
    }
}

impl Default for ParameterSet {
    fn default() -> Self {
        Self::new()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SummaryRow {
    pub name: String,
    pub shape: Vec<usize>,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ParameterSummary {
    pub rows: Vec<SummaryRow>,
    pub total: usize,
}

impl fmt::Display for ParameterSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let width = self.rows.iter().map(|r| r.name.len()).max().unwrap_or(4).max(4);
        writeln!(f, "{:<width$}  {:<18}  {:>10}", "name", "shape", "count")?;
        for r in &self.rows {
            writeln!(f, "{:<width$}  {:<18}  {:>10}", r.name, format!("{:?}", r.shape), r.count)?;
        }
        write!(f, "{:<width$}  {:<18}  {:>10}", "total", "", self.total)
    }
}

impl ParameterSet {
    pub fn new() -> Self {
        Self {
            version: PARAM_VERSION.to_string(),
            vars: BTreeMap::new(),
        }
    }

    pub fn version(&self) -> &str {
        &self.version
    }

    pub fn insert(&mut self, name: impl Into<String>, var: Var) -> Result<()> {
        let name = name.into();
        if self.vars.contains_key(&name) {
            return Err(AeroError::Model(format!("duplicate parameter name {name}")));
        }
        self.vars.insert(name, var);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Var> {
        self.vars.get(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Var)> {
        self.vars.iter()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.vars.keys()
    }

    pub fn len(&self) -> usize {
        self.vars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vars.is_empty()
    }

    pub fn total_count(&self) -> usize {
        self.vars.values().map(|v| v.elem_count()).sum()
    }

    pub fn summary(&self) -> ParameterSummary {
        let rows: Vec<SummaryRow> = self
            .vars
            .iter()
            .map(|(name, v)| SummaryRow {
                name: name.clone(),
                shape: v.dims().to_vec(),
                count: v.elem_count(),
            })
            .collect();
        let total = rows.iter().map(|r| r.count).sum();
        ParameterSummary { rows, total }
    }

    /// Independent copy with fresh storage.
    pub fn deep_clone(&self) -> Result<Self> {
        let mut out = Self::new();
        out.version = self.version.clone();
        for (name, v) in &self.vars {
            out.vars.insert(name.clone(), Var::from_tensor(&v.as_tensor().copy()?)?);
        }
        Ok(out)
    }

    /// Detached snapshot of every array.
    pub fn tensors(&self) -> BTreeMap<String, Tensor> {
        self.vars
            .iter()
            .map(|(k, v)| (k.clone(), v.as_tensor().detach()))
            .collect()
    }

    /// Wraps loaded arrays, rejecting non-finite values.
    pub fn from_tensors(tensors: impl IntoIterator<Item = (String, Tensor)>) -> Result<Self> {
        let mut out = Self::new();
        for (name, t) in tensors {
            if !all_finite(&t)? {
                return Err(AeroError::Model(format!("parameter {name} holds non-finite values")));
            }
            out.insert(name, Var::from_tensor(&t)?)?;
        }
        Ok(out)
    }

    /// Overwrites values in place from another set with identical names and shapes.
    pub fn assign_from(&self, other: &ParameterSet) -> Result<()> {
        for (name, v) in &self.vars {
            let src = other
                .get(name)
                .ok_or_else(|| AeroError::Model(format!("missing parameter {name}")))?;
            v.set(src.as_tensor())?;
        }
        Ok(())
    }

    /// Raw little-endian bytes of every array in name order, for bitwise comparisons.
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        for (name, v) in &self.vars {
            out.extend_from_slice(name.as_bytes());
            let flat = v.as_tensor().flatten_all()?.to_dtype(DType::F64)?.to_vec1::<f64>()?;
            for x in flat {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn dtype(&self) -> Option<DType> {
        self.vars.values().next().map(|v| v.dtype())
    }
}

pub fn all_finite(t: &Tensor) -> Result<bool> {
    let v = t.flatten_all()?.to_dtype(DType::F64)?.to_vec1::<f64>()?;
    Ok(v.iter().all(|x| x.is_finite()))
}

/// How a fresh parameter is filled.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    /// `U(-1/√fan_in, 1/√fan_in)`.
    FanIn(usize),
    Const(f64),
    /// Square identity matrix.
    Identity,
    /// Fan-in uniform with the second quarter (forget gate) set to 1.
    LstmBias { hidden: usize, fan_in: usize },
}

enum Mode {
    Init(ChaCha8Rng),
    Load,
}

struct BuilderState {
    params: ParameterSet,
    accessed: std::collections::BTreeSet<String>,
    mode: Mode,
    dtype: DType,
    device: Device,
}

/// Hierarchical parameter factory. Sub-builders from [`ParamBuilder::pp`]
/// share state with their parent.
#[derive(Clone)]
pub struct ParamBuilder {
    state: Rc<RefCell<BuilderState>>,
    prefix: String,
}

impl ParamBuilder {
    pub fn for_init(seed: u64, dtype: DType, device: &Device) -> Self {
        Self {
            state: Rc::new(RefCell::new(BuilderState {
                params: ParameterSet::new(),
                accessed: Default::default(),
                mode: Mode::Init(ChaCha8Rng::seed_from_u64(seed)),
                dtype,
                device: device.clone(),
            })),
            prefix: String::new(),
        }
    }

    /// Binds to existing parameters; the built modules alias their storage.
    pub fn for_load(params: &ParameterSet) -> Result<Self> {
        let first = params
            .vars
            .values()
            .next()
            .ok_or_else(|| AeroError::Model("cannot bind to an empty parameter set".into()))?;
        let mut shared = ParameterSet::new();
        shared.version = params.version.clone();
        for (k, v) in &params.vars {
            shared.vars.insert(k.clone(), v.clone());
        }
        Ok(Self {
            state: Rc::new(RefCell::new(BuilderState {
                dtype: first.dtype(),
                device: first.device().clone(),
                params: shared,
                accessed: Default::default(),
                mode: Mode::Load,
            })),
            prefix: String::new(),
        })
    }

    pub fn pp(&self, name: impl fmt::Display) -> Self {
        let prefix = if self.prefix.is_empty() {
            name.to_string()
        } else {
            format!("{}.{}", self.prefix, name)
        };
        Self {
            state: self.state.clone(),
            prefix,
        }
    }

    pub fn dtype(&self) -> DType {
        self.state.borrow().dtype
    }

    pub fn device(&self) -> Device {
        self.state.borrow().device.clone()
    }

    fn full_name(&self, name: &str) -> String {
        if self.prefix.is_empty() {
            name.to_string()
        } else {
            format!("{}.{}", self.prefix, name)
        }
    }

    pub fn get(&self, shape: &[usize], name: &str, init: Init) -> Result<Tensor> {
        let full = self.full_name(name);
        let mut state = self.state.borrow_mut();
        match &mut state.mode {
            Mode::Load => {
                let var = state
                    .params
                    .get(&full)
                    .ok_or_else(|| AeroError::Model(format!("missing parameter {full}")))?;
                if var.dims() != shape {
                    return Err(AeroError::Model(format!(
                        "parameter {full} has shape {:?}, expected {shape:?}",
                        var.dims()
                    )));
                }
                let handle = var.as_tensor().clone();
                state.accessed.insert(full);
                Ok(handle)
            }
            Mode::Init(rng) => {
                let n: usize = shape.iter().product();
                let values = fill(rng, n, shape, init)?;
                let t = Tensor::from_vec(values, shape, &state.device)?.to_dtype(state.dtype)?;
                let var = Var::from_tensor(&t)?;
                let handle = var.as_tensor().clone();
                state.params.insert(full, var)?;
                Ok(handle)
            }
        }
    }

    /// Names in a bound set that no module asked for.
    pub fn unused(&self) -> Vec<String> {
        let state = self.state.borrow();
        match state.mode {
            Mode::Init(_) => Vec::new(),
            Mode::Load => state
                .params
                .names()
                .filter(|n| !state.accessed.contains(*n))
                .cloned()
                .collect(),
        }
    }

    /// Parameters created or bound so far.
    pub fn into_params(self) -> ParameterSet {
        let state = self.state.borrow();
        let mut out = ParameterSet::new();
        out.version = state.params.version.clone();
        for (k, v) in &state.params.vars {
            out.vars.insert(k.clone(), v.clone());
        }
        out
    }
}

fn fill(rng: &mut ChaCha8Rng, n: usize, shape: &[usize], init: Init) -> Result<Vec<f64>> {
    let uniform = |rng: &mut ChaCha8Rng, fan_in: usize| {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        rng.gen_range(-bound..=bound)
    };
    Ok(match init {
        Init::FanIn(fan_in) => (0..n).map(|_| uniform(rng, fan_in)).collect(),
        Init::Const(c) => vec![c; n],
        Init::Identity => {
            if shape.len() != 2 || shape[0] != shape[1] {
                return Err(AeroError::Model(format!("identity init needs a square matrix, got {shape:?}")));
            }
            let d = shape[0];
            (0..n).map(|i| if i / d == i % d { 1.0 } else { 0.0 }).collect()
        }
        Init::LstmBias { hidden, fan_in } => (0..n)
            .map(|i| {
                let v = uniform(rng, fan_in);
                if (hidden..2 * hidden).contains(&i) {
                    1.0
                } else {
                    v
                }
            })
            .collect(),
    })
}
