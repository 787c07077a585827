//! Dense, 1-D convolution, max pooling and dropout layers with explicit
//! backward passes. Sequences are `(length, channels)` row-major slices.

use std::hash::{Hash, Hasher};

use serde::{Deserialize, Serialize};

use super::rng::RngStream;
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Sigmoid,
    Tanh,
    Linear,
}

impl Activation {
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Sigmoid => sigmoid(z),
            Activation::Tanh => z.tanh(),
            Activation::Linear => z,
        }
    }

    /// Derivative expressed through the activation output.
    pub fn grad_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => y * (1.0 - y),
            Activation::Tanh => 1.0 - y * y,
            Activation::Linear => 1.0,
        }
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Gradients of a weight layer.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerGrads {
    pub dx: Vec<f64>,
    pub dw: Vec<f64>,
    pub db: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct DenseCache {
    x: Vec<f64>,
    y: Vec<f64>,
    act: Activation,
}

impl DenseCache {
    pub fn output(&self) -> &[f64] {
        &self.y
    }

    /// Feeds the relu on/off pattern into `h`.
    pub fn fingerprint<H: Hasher>(&self, h: &mut H) {
        if self.act == Activation::Relu {
            for y in &self.y {
                (*y > 0.0).hash(h);
            }
        }
    }
}

/// `y = act(W x + b)` with `W` of shape `[m, n]`.
pub fn dense_forward(
    x: &[f64],
    w: &Tensor,
    b: &Tensor,
    act: Activation,
) -> Result<(Vec<f64>, DenseCache)> {
    let (m, n) = match w.shape() {
        [m, n] => (*m, *n),
        s => return Err(Error::arg(format!("dense weight must be 2-D, got {s:?}"))),
    };
    if x.len() != n || b.len() != m {
        return Err(Error::arg(format!(
            "dense shapes: input {} weight [{m}, {n}] bias {}",
            x.len(),
            b.len()
        )));
    }
    let wd = w.data();
    let y: Vec<f64> = (0..m)
        .map(|i| {
            let row = &wd[i * n..(i + 1) * n];
            act.apply(b.data()[i] + dot(row, x))
        })
        .collect();
    Ok((
        y.clone(),
        DenseCache {
            x: x.to_vec(),
            y,
            act,
        },
    ))
}

pub fn dense_backward(cache: &DenseCache, w: &Tensor, dy: &[f64]) -> LayerGrads {
    let (m, n) = (w.shape()[0], w.shape()[1]);
    let dz: Vec<f64> = dy
        .iter()
        .zip(&cache.y)
        .map(|(g, y)| g * cache.act.grad_from_output(*y))
        .collect();
    let mut dw = vec![0.0; m * n];
    let mut dx = vec![0.0; n];
    let wd = w.data();
    for i in 0..m {
        let g = dz[i];
        if g == 0.0 {
            continue;
        }
        let row = &wd[i * n..(i + 1) * n];
        let drow = &mut dw[i * n..(i + 1) * n];
        for j in 0..n {
            drow[j] = g * cache.x[j];
            dx[j] += g * row[j];
        }
    }
    LayerGrads { dx, dw, db: dz }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let chunks = a.len() / 4;
    for k in 0..chunks {
        let i = k * 4;
        acc[0] += a[i] * b[i];
        acc[1] += a[i + 1] * b[i + 1];
        acc[2] += a[i + 2] * b[i + 2];
        acc[3] += a[i + 3] * b[i + 3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for i in chunks * 4..a.len() {
        s += a[i] * b[i];
    }
    s
}

pub const CONV_KERNEL: usize = 3;

#[derive(Clone, Debug)]
pub struct ConvCache {
    x: Vec<f64>,
    len: usize,
    c_in: usize,
    y: Vec<f64>,
    act: Activation,
}

impl ConvCache {
    pub fn out_len(&self) -> usize {
        self.len - CONV_KERNEL + 1
    }

    pub fn fingerprint<H: Hasher>(&self, h: &mut H) {
        if self.act == Activation::Relu {
            for y in &self.y {
                (*y > 0.0).hash(h);
            }
        }
    }
}

/// Valid (unpadded) kernel-3 correlation. `kernels` has shape
/// `[c_out, c_in, 3]`; the output is `(len - 2, c_out)`.
pub fn conv1d_forward(
    x: &[f64],
    len: usize,
    kernels: &Tensor,
    bias: &Tensor,
    act: Activation,
) -> Result<(Vec<f64>, ConvCache)> {
    let (c_out, c_in) = match kernels.shape() {
        [o, i, k] if *k == CONV_KERNEL => (*o, *i),
        s => return Err(Error::arg(format!("conv kernels must be [out, in, 3], got {s:?}"))),
    };
    if len < CONV_KERNEL {
        return Err(Error::arg(format!("conv input length {len} is shorter than the kernel")));
    }
    if x.len() != len * c_in || bias.len() != c_out {
        return Err(Error::arg(format!(
            "conv shapes: input {} for length {len} x {c_in} channels, bias {}",
            x.len(),
            bias.len()
        )));
    }
    let out_len = len - CONV_KERNEL + 1;
    let k = kernels.data();
    let b = bias.data();
    let span = CONV_KERNEL * c_in;
    // kernels reordered to [c_out][j * c_in + c] to match the input window layout
    let mut kt = vec![0.0; c_out * span];
    for o in 0..c_out {
        for c in 0..c_in {
            for j in 0..CONV_KERNEL {
                kt[o * span + j * c_in + c] = k[(o * c_in + c) * CONV_KERNEL + j];
            }
        }
    }
    let mut y = vec![0.0; out_len * c_out];
    for t in 0..out_len {
        let window = &x[t * c_in..t * c_in + span];
        for o in 0..c_out {
            y[t * c_out + o] = act.apply(b[o] + dot(&kt[o * span..(o + 1) * span], window));
        }
    }
    Ok((
        y.clone(),
        ConvCache {
            x: x.to_vec(),
            len,
            c_in,
            y,
            act,
        },
    ))
}

pub fn conv1d_backward(cache: &ConvCache, kernels: &Tensor, dy: &[f64]) -> LayerGrads {
    let c_out = kernels.shape()[0];
    let c_in = cache.c_in;
    let out_len = cache.out_len();
    let k = kernels.data();
    let mut dk = vec![0.0; k.len()];
    let mut db = vec![0.0; c_out];
    let mut dx = vec![0.0; cache.x.len()];
    for t in 0..out_len {
        for o in 0..c_out {
            let i = t * c_out + o;
            let g = dy[i] * cache.act.grad_from_output(cache.y[i]);
            if g == 0.0 {
                continue;
            }
            db[o] += g;
            for c in 0..c_in {
                let base = (o * c_in + c) * CONV_KERNEL;
                for j in 0..CONV_KERNEL {
                    let xi = (t + j) * c_in + c;
                    dk[base + j] += g * cache.x[xi];
                    dx[xi] += g * k[base + j];
                }
            }
        }
    }
    LayerGrads { dx, dw: dk, db }
}

#[derive(Clone, Debug)]
pub struct PoolCache {
    in_len: usize,
    channels: usize,
    argmax: Vec<usize>,
}

impl PoolCache {
    pub fn fingerprint<H: Hasher>(&self, h: &mut H) {
        self.argmax.hash(h);
    }
}

pub fn pooled_len(len: usize, k: usize, s: usize) -> usize {
    if len < k {
        0
    } else {
        (len - k) / s + 1
    }
}

/// Max over windows of `k` samples every `s` samples, per channel. A trailing
/// remainder shorter than `k` is dropped. Ties go to the earliest index.
pub fn maxpool1d_forward(
    x: &[f64],
    len: usize,
    channels: usize,
    k: usize,
    s: usize,
) -> Result<(Vec<f64>, PoolCache)> {
    if k < 1 || s < 1 {
        return Err(Error::arg(format!("pool window {k} and stride {s} must be >= 1")));
    }
    if len < k {
        return Err(Error::arg(format!("pool input length {len} is shorter than window {k}")));
    }
    if x.len() != len * channels {
        return Err(Error::arg("pool input size does not match length x channels"));
    }
    let out_len = pooled_len(len, k, s);
    let mut y = vec![0.0; out_len * channels];
    let mut argmax = vec![0; out_len * channels];
    for t in 0..out_len {
        for c in 0..channels {
            let mut best = t * s * channels + c;
            for j in 1..k {
                let idx = (t * s + j) * channels + c;
                if x[idx] > x[best] {
                    best = idx;
                }
            }
            y[t * channels + c] = x[best];
            argmax[t * channels + c] = best;
        }
    }
    Ok((
        y,
        PoolCache {
            in_len: len,
            channels,
            argmax,
        },
    ))
}

pub fn maxpool1d_backward(cache: &PoolCache, dy: &[f64]) -> Vec<f64> {
    let mut dx = vec![0.0; cache.in_len * cache.channels];
    for (g, &i) in dy.iter().zip(&cache.argmax) {
        dx[i] += g;
    }
    dx
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

/// Per-entry scale applied by dropout: 0 for dropped entries, `1/(1-rate)`
/// for kept ones.
#[derive(Clone, Debug)]
pub struct DropoutMask(Option<Vec<f64>>);

impl DropoutMask {
    pub fn backward(&self, dy: &[f64]) -> Vec<f64> {
        match &self.0 {
            Some(m) => dy.iter().zip(m).map(|(g, s)| g * s).collect(),
            None => dy.to_vec(),
        }
    }

    pub fn scales(&self) -> Option<&[f64]> {
        self.0.as_deref()
    }
}

/// Inverted dropout; identity in infer mode or at rate 0.
pub fn dropout_forward(
    x: &[f64],
    rate: f64,
    mode: Mode,
    rng: &mut RngStream,
) -> Result<(Vec<f64>, DropoutMask)> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::arg(format!("dropout rate must be in [0, 1), got {rate}")));
    }
    if mode == Mode::Infer || rate == 0.0 {
        return Ok((x.to_vec(), DropoutMask(None)));
    }
    let keep = 1.0 / (1.0 - rate);
    let mask: Vec<f64> = x
        .iter()
        .map(|_| if rng.uniform() < rate { 0.0 } else { keep })
        .collect();
    let y = x.iter().zip(&mask).map(|(v, s)| v * s).collect();
    Ok((y, DropoutMask(Some(mask))))
}

/// Binary cross-entropy on a probability clamped to `[1e-7, 1 - 1e-7]`.
/// Returns the loss and its derivative with respect to `p`.
pub fn bce_loss(p: f64, y: f64) -> (f64, f64) {
    const EPS: f64 = 1e-7;
    let p = p.clamp(EPS, 1.0 - EPS);
    let loss = -(y * p.ln() + (1.0 - y) * (1.0 - p).ln());
    let dp = -y / p + (1.0 - y) / (1.0 - p);
    (loss, dp)
}
