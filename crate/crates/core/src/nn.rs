//! Differentiable building blocks on top of candle tensors.

use candle_core::{DType, Device, Tensor, D};
use serde::{Deserialize, Serialize};

use crate::error::{AeroError, Result};
use crate::params::{Init, ParamBuilder};

/// `σ(x)` written through `tanh` so large inputs never overflow.
pub fn sigmoid(x: &Tensor) -> Result<Tensor> {
    Ok(x.affine(0.5, 0.0)?.tanh()?.affine(0.5, 0.5)?)
}

/// Gated linear unit: splits `dim` in half, `a · σ(b)`.
pub fn glu(x: &Tensor, dim: usize) -> Result<Tensor> {
    let n = x.dim(dim)?;
    if n % 2 != 0 {
        return Err(AeroError::Model(format!("glu needs an even size on dim {dim}, got {n}")));
    }
    let a = x.narrow(dim, 0, n / 2)?;
    let b = x.narrow(dim, n / 2, n / 2)?;
    Ok(a.mul(&sigmoid(&b)?)?)
}

pub fn leaky_relu(x: &Tensor, slope: f64) -> Result<Tensor> {
    Ok(x.relu()?.sub(&x.neg()?.relu()?.affine(slope, 0.0)?)?)
}

/// Numerically stable softmax over the last axis.
pub fn softmax_last(x: &Tensor) -> Result<Tensor> {
    let m = x.max_keepdim(D::Minus1)?.detach();
    let e = x.broadcast_sub(&m)?.exp()?;
    let s = e.sum_keepdim(D::Minus1)?;
    Ok(e.broadcast_div(&s)?)
}

/// Reflect-pads the last axis (edge sample not repeated).
pub fn reflect_pad_last(x: &Tensor, left: usize, right: usize) -> Result<Tensor> {
    if left == 0 && right == 0 {
        return Ok(x.clone());
    }
    let len = x.dim(D::Minus1)?;
    if len < 2 || left >= len || right >= len {
        return Err(AeroError::Model(format!(
            "reflect padding ({left}, {right}) too large for length {len}"
        )));
    }
    let idx: Vec<u32> = (0..left + len + right)
        .map(|i| {
            let j = i as isize - left as isize;
            let r = if j < 0 {
                -j
            } else if j >= len as isize {
                2 * (len as isize - 1) - j
            } else {
                j
            };
            r as u32
        })
        .collect();
    let idx = Tensor::from_vec(idx, left + len + right, x.device())?;
    Ok(x.index_select(&idx, x.rank() - 1)?)
}

pub fn check_finite(x: &Tensor, layer: &str) -> Result<()> {
    let v = x.flatten_all()?.to_dtype(DType::F64)?.to_vec1::<f64>()?;
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(AeroError::NonFinite { layer: layer.to_string() })
    }
}

/// Unpadded convolution of `(B, C_in, L)` with `(C_out, C_in / groups, K)`
/// as a gather of every tap followed by one batched matmul.
pub fn conv1d(x: &Tensor, w: &Tensor, stride: usize, dilation: usize, groups: usize) -> Result<Tensor> {
    let (b, cin, l) = x.dims3()?;
    let (cout, cg, k) = w.dims3()?;
    let span = dilation * (k - 1) + 1;
    if l < span || cg * groups != cin {
        return Err(AeroError::Model(format!(
            "conv of {:?} with kernel {:?} (groups {groups}) is not defined",
            x.dims(),
            w.dims()
        )));
    }
    let lo = (l - span) / stride + 1;
    let idx: Vec<u32> = (0..k)
        .flat_map(|j| (0..lo).map(move |t| (j * dilation + t * stride) as u32))
        .collect();
    let idx = Tensor::from_vec(idx, k * lo, x.device())?;
    let cols = x.index_select(&idx, 2)?.reshape((b, groups, cg * k, lo))?;
    let w = w.reshape((groups, cout / groups, cg * k))?;
    Ok(w.broadcast_matmul(&cols)?.reshape((b, cout, lo))?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvOpts {
    pub stride: usize,
    pub padding: usize,
    pub dilation: usize,
    pub groups: usize,
    pub bias: bool,
}

impl Default for ConvOpts {
    fn default() -> Self {
        Self { stride: 1, padding: 0, dilation: 1, groups: 1, bias: true }
    }
}

#[derive(Debug, Clone)]
pub struct Conv1d {
    weight: Tensor,
    bias: Option<Tensor>,
    opts: ConvOpts,
}

impl Conv1d {
    pub fn new(pb: &ParamBuilder, cin: usize, cout: usize, kernel: usize, opts: ConvOpts) -> Result<Self> {
        if opts.groups == 0 || cin % opts.groups != 0 || cout % opts.groups != 0 {
            return Err(AeroError::Model(format!(
                "conv groups {} incompatible with channels {cin}->{cout}",
                opts.groups
            )));
        }
        let fan_in = cin / opts.groups * kernel;
        let weight = pb.get(&[cout, cin / opts.groups, kernel], "weight", Init::FanIn(fan_in))?;
        let bias = if opts.bias {
            Some(pb.get(&[cout], "bias", Init::FanIn(fan_in))?)
        } else {
            None
        };
        Ok(Self { weight, bias, opts })
    }

    /// `(B, C_in, L) -> (B, C_out, L')`.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let o = &self.opts;
        let x = if o.padding > 0 { x.pad_with_zeros(2, o.padding, o.padding)? } else { x.clone() };
        let y = conv1d(&x, &self.weight, o.stride, o.dilation, o.groups)?;
        match &self.bias {
            Some(b) => Ok(y.broadcast_add(&b.reshape((1, (), 1))?)?),
            None => Ok(y),
        }
    }
}

/// Transposed convolution computed as zero insertion followed by a plain
/// convolution.
#[derive(Debug, Clone)]
pub struct ConvTranspose1d {
    weight: Tensor,
    bias: Tensor,
    kernel: usize,
    stride: usize,
    padding: usize,
}

impl ConvTranspose1d {
    pub fn new(pb: &ParamBuilder, cin: usize, cout: usize, kernel: usize, stride: usize, padding: usize) -> Result<Self> {
        if padding > kernel - 1 {
            return Err(AeroError::Model(format!("transposed conv padding {padding} exceeds kernel {kernel}")));
        }
        let fan_in = (cin * kernel / stride).max(1);
        let weight = pb.get(&[cout, cin, kernel], "weight", Init::FanIn(fan_in))?;
        let bias = pb.get(&[cout], "bias", Init::FanIn(fan_in))?;
        Ok(Self { weight, bias, kernel, stride, padding })
    }

    /// `(B, C_in, L) -> (B, C_out, (L-1)·stride - 2·padding + kernel)`.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (b, c, l) = x.dims3()?;
        let stuffed = if self.stride == 1 {
            x.clone()
        } else {
            let z = Tensor::zeros((b, c, l, self.stride - 1), x.dtype(), x.device())?;
            Tensor::cat(&[&x.unsqueeze(3)?, &z], 3)?
                .reshape((b, c, l * self.stride))?
                .narrow(2, 0, (l - 1) * self.stride + 1)?
        };
        let edge = self.kernel - 1 - self.padding;
        let y = conv1d(&stuffed.pad_with_zeros(2, edge, edge)?, &self.weight, 1, 1, 1)?;
        Ok(y.broadcast_add(&self.bias.reshape((1, (), 1))?)?)
    }
}

#[derive(Debug, Clone)]
pub struct Linear {
    weight: Tensor,
    bias: Tensor,
}

impl Linear {
    pub fn new(pb: &ParamBuilder, cin: usize, cout: usize) -> Result<Self> {
        let weight = pb.get(&[cout, cin], "weight", Init::FanIn(cin))?;
        let bias = pb.get(&[cout], "bias", Init::FanIn(cin))?;
        Ok(Self { weight, bias })
    }

    /// Applies over the last axis.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        Ok(x.broadcast_matmul(&self.weight.t()?)?.broadcast_add(&self.bias)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ActivationKind {
    #[default]
    Snake,
    Gelu,
    Relu,
}

impl std::str::FromStr for ActivationKind {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "snake" => Ok(Self::Snake),
            "gelu" => Ok(Self::Gelu),
            "relu" => Ok(Self::Relu),
            other => Err(format!("unknown activation {other:?} (snake, gelu, relu)")),
        }
    }
}

/// Channel-wise activation for `(B, C, L)` inputs.
#[derive(Debug, Clone)]
pub enum Activation {
    /// `x + sin²(αx)/α` with a learnable α per channel.
    Snake(Tensor),
    Gelu,
    Relu,
}

impl Activation {
    pub fn new(pb: &ParamBuilder, kind: ActivationKind, channels: usize, alpha_init: f64) -> Result<Self> {
        Ok(match kind {
            ActivationKind::Snake => Activation::Snake(pb.get(&[channels], "alpha", Init::Const(alpha_init))?),
            ActivationKind::Gelu => Activation::Gelu,
            ActivationKind::Relu => Activation::Relu,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        match self {
            Activation::Snake(alpha) => {
                let a = alpha.reshape((1, (), 1))?;
                let s = x.broadcast_mul(&a)?.sin()?.sqr()?;
                Ok(x.add(&s.broadcast_div(&a.affine(1.0, 1e-9)?)?)?)
            }
            Activation::Gelu => Ok(x.gelu_erf()?),
            Activation::Relu => Ok(x.relu()?),
        }
    }
}

#[derive(Debug, Clone)]
struct LstmCell {
    w_ih: Tensor,
    w_hh: Tensor,
    bias: Tensor,
    hidden: usize,
}

impl LstmCell {
    fn new(pb: &ParamBuilder, input: usize, hidden: usize) -> Result<Self> {
        Ok(Self {
            w_ih: pb.get(&[4 * hidden, input], "w_ih", Init::FanIn(hidden))?,
            w_hh: pb.get(&[4 * hidden, hidden], "w_hh", Init::FanIn(hidden))?,
            bias: pb.get(&[4 * hidden], "bias", Init::LstmBias { hidden, fan_in: hidden })?,
            hidden,
        })
    }

    /// `(M, T, I) -> (M, T, H)`; gate order i, f, g, o.
    fn run(&self, x: &Tensor, reverse: bool) -> Result<Tensor> {
        let (m, t, _) = x.dims3()?;
        let h_dim = self.hidden;
        let xw = x.broadcast_matmul(&self.w_ih.t()?)?.broadcast_add(&self.bias)?;
        let w_hh_t = self.w_hh.t()?;
        let mut h = Tensor::zeros((m, h_dim), x.dtype(), x.device())?;
        let mut c = h.clone();
        let mut outs: Vec<Option<Tensor>> = vec![None; t];
        for step in 0..t {
            let ti = if reverse { t - 1 - step } else { step };
            let g = xw.narrow(1, ti, 1)?.squeeze(1)?.add(&h.matmul(&w_hh_t)?)?;
            let i = sigmoid(&g.narrow(1, 0, h_dim)?)?;
            let f = sigmoid(&g.narrow(1, h_dim, h_dim)?)?;
            let gg = g.narrow(1, 2 * h_dim, h_dim)?.tanh()?;
            let o = sigmoid(&g.narrow(1, 3 * h_dim, h_dim)?)?;
            c = f.mul(&c)?.add(&i.mul(&gg)?)?;
            h = o.mul(&c.tanh()?)?;
            outs[ti] = Some(h.clone());
        }
        let outs: Vec<Tensor> = outs.into_iter().map(|o| o.expect("every step written")).collect();
        Ok(Tensor::stack(&outs, 1)?)
    }
}

/// Stacked bidirectional LSTM with a linear projection back to the input
/// width and a residual connection.
#[derive(Debug, Clone)]
pub struct BiLstm {
    layers: Vec<(LstmCell, LstmCell)>,
    proj: Linear,
}

impl BiLstm {
    pub fn new(pb: &ParamBuilder, dim: usize, layers: usize) -> Result<Self> {
        let mut cells = Vec::with_capacity(layers);
        for l in 0..layers {
            let input = if l == 0 { dim } else { 2 * dim };
            let lp = pb.pp(format!("layer{l}"));
            cells.push((LstmCell::new(&lp.pp("fwd"), input, dim)?, LstmCell::new(&lp.pp("bwd"), input, dim)?));
        }
        Ok(Self { layers: cells, proj: Linear::new(&pb.pp("proj"), 2 * dim, dim)? })
    }

    /// `(M, T, D) -> (M, T, D)`.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mut h = x.clone();
        for (f, b) in &self.layers {
            h = Tensor::cat(&[f.run(&h, false)?, b.run(&h, true)?], 2)?;
        }
        Ok(x.add(&self.proj.forward(&h)?)?)
    }
}

/// Multi-head self-attention restricted to `|i - j| <= window / 2`, with a
/// residual connection. Queries are processed in blocks so memory grows
/// linearly with sequence length.
#[derive(Debug, Clone)]
pub struct LocalAttention {
    q: Linear,
    k: Linear,
    v: Linear,
    o: Linear,
    heads: usize,
    window: usize,
}

impl LocalAttention {
    pub fn new(pb: &ParamBuilder, dim: usize, heads: usize, window: usize) -> Result<Self> {
        if heads == 0 || dim % heads != 0 {
            return Err(AeroError::Model(format!("attention width {dim} not divisible by {heads} heads")));
        }
        Ok(Self {
            q: Linear::new(&pb.pp("q"), dim, dim)?,
            k: Linear::new(&pb.pp("k"), dim, dim)?,
            v: Linear::new(&pb.pp("v"), dim, dim)?,
            o: Linear::new(&pb.pp("o"), dim, dim)?,
            heads,
            window,
        })
    }

    fn split_heads(&self, x: &Tensor) -> Result<Tensor> {
        let (m, t, d) = x.dims3()?;
        Ok(x.reshape((m, t, self.heads, d / self.heads))?.transpose(1, 2)?.contiguous()?)
    }

    /// `(M, T, D) -> (M, T, D)`.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (m, t, d) = x.dims3()?;
        let hd = d / self.heads;
        let q = self.split_heads(&self.q.forward(x)?)?;
        let k = self.split_heads(&self.k.forward(x)?)?;
        let v = self.split_heads(&self.v.forward(x)?)?;
        let half = self.window / 2;
        let block = self.window.max(1);
        let scale = 1.0 / (hd as f64).sqrt();
        let mut pieces = Vec::new();
        let mut start = 0;
        while start < t {
            let end = (start + block).min(t);
            let k0 = start.saturating_sub(half);
            let k1 = (end + half).min(t);
            let qb = q.narrow(2, start, end - start)?;
            let kb = k.narrow(2, k0, k1 - k0)?;
            let vb = v.narrow(2, k0, k1 - k0)?;
            let scores = qb.matmul(&kb.t()?.contiguous()?)?.affine(scale, 0.0)?;
            let mask = band_mask(start, end, k0, k1, half, x.dtype(), x.device())?;
            let w = softmax_last(&scores.broadcast_add(&mask)?)?;
            pieces.push(w.matmul(&vb)?);
            start = end;
        }
        let att = Tensor::cat(&pieces, 2)?.transpose(1, 2)?.reshape((m, t, d))?;
        Ok(x.add(&self.o.forward(&att)?)?)
    }
}

fn band_mask(q0: usize, q1: usize, k0: usize, k1: usize, half: usize, dtype: DType, device: &Device) -> Result<Tensor> {
    let mut v = Vec::with_capacity((q1 - q0) * (k1 - k0));
    for i in q0..q1 {
        for j in k0..k1 {
            v.push(if i.abs_diff(j) <= half { 0.0f64 } else { -1e9 });
        }
    }
    Ok(Tensor::from_vec(v, (q1 - q0, k1 - k0), device)?.to_dtype(dtype)?)
}
