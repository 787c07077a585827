//! LSTM and GRU layers over `(steps, features)` sequences, plus the
//! bidirectional wrapper. Initial hidden and cell states are zero.
//!
//! LSTM gate rows are stacked `[input, forget, candidate, output]`; GRU rows
//! are `[update, reset, candidate]` with the reset gate applied before the
//! recurrent candidate product.

use serde::{Deserialize, Serialize};

use super::layers::{dot, sigmoid};
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CellKind {
    Lstm,
    Gru,
}

impl CellKind {
    pub fn gates(self) -> usize {
        match self {
            CellKind::Lstm => 4,
            CellKind::Gru => 3,
        }
    }
}

/// Weights of one recurrent direction: input kernel `[g*H, D]`, recurrent
/// kernel `[g*H, H]` and bias `[g*H]`.
#[derive(Clone, Copy, Debug)]
pub struct RecurrentWeights<'a> {
    pub wx: &'a Tensor,
    pub wh: &'a Tensor,
    pub b: &'a Tensor,
}

impl RecurrentWeights<'_> {
    fn dims(&self, kind: CellKind) -> Result<(usize, usize)> {
        let g = kind.gates();
        let (rows, d) = match self.wx.shape() {
            [r, d] => (*r, *d),
            s => return Err(Error::arg(format!("recurrent input kernel must be 2-D, got {s:?}"))),
        };
        if rows % g != 0 {
            return Err(Error::arg("recurrent input kernel rows not divisible by gate count"));
        }
        let h = rows / g;
        if self.wh.shape() != [rows, h] || self.b.len() != rows {
            return Err(Error::arg(format!(
                "recurrent kernel {:?} / bias {} inconsistent with {} units",
                self.wh.shape(),
                self.b.len(),
                h
            )));
        }
        Ok((h, d))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RecurrentGrads {
    pub dx: Vec<f64>,
    pub dwx: Vec<f64>,
    pub dwh: Vec<f64>,
    pub db: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct RecurrentCache {
    kind: CellKind,
    steps: usize,
    input_dim: usize,
    units: usize,
    x: Vec<f64>,
    /// Hidden states `h_0..h_T`, `h_0` = 0.
    h: Vec<f64>,
    /// Cell states `c_0..c_T` (LSTM only).
    c: Vec<f64>,
    /// Post-activation gates per step.
    gates: Vec<f64>,
    /// GRU only: recurrent candidate pre-product `U_n (r * h)` input, i.e. `r * h_prev`.
    reset_h: Vec<f64>,
}

impl RecurrentCache {
    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn units(&self) -> usize {
        self.units
    }

    /// Hidden states for steps 1..=T, `(T, H)` row-major.
    pub fn outputs(&self) -> &[f64] {
        &self.h[self.units..]
    }
}

fn matvec_add(out: &mut [f64], w: &[f64], cols: usize, x: &[f64]) {
    for (i, o) in out.iter_mut().enumerate() {
        *o += dot(&w[i * cols..(i + 1) * cols], x);
    }
}

/// Adds `W^T g` into `out` for `W` of shape `[g.len(), out.len()]`.
fn matvec_t_add(out: &mut [f64], w: &[f64], g: &[f64]) {
    let cols = out.len();
    for (i, &gi) in g.iter().enumerate() {
        if gi == 0.0 {
            continue;
        }
        let row = &w[i * cols..(i + 1) * cols];
        for (o, wij) in out.iter_mut().zip(row) {
            *o += gi * wij;
        }
    }
}

fn outer_add(out: &mut [f64], g: &[f64], x: &[f64]) {
    let cols = x.len();
    for (i, &gi) in g.iter().enumerate() {
        if gi == 0.0 {
            continue;
        }
        let row = &mut out[i * cols..(i + 1) * cols];
        for (o, xj) in row.iter_mut().zip(x) {
            *o += gi * xj;
        }
    }
}

/// Runs one recurrent direction over `x` of shape `(steps, D)` and returns
/// the hidden state after each step, `(steps, H)`.
pub fn recurrent_forward(
    kind: CellKind,
    x: &[f64],
    steps: usize,
    w: RecurrentWeights,
) -> Result<(Vec<f64>, RecurrentCache)> {
    let (units, d) = w.dims(kind)?;
    if steps == 0 {
        return Err(Error::arg("recurrent layer needs a nonempty sequence"));
    }
    if x.len() != steps * d {
        return Err(Error::arg(format!(
            "recurrent input has {} values, expected {steps} x {d}",
            x.len()
        )));
    }
    let g = kind.gates();
    let hu = units;
    let mut h = vec![0.0; (steps + 1) * hu];
    let mut c = if kind == CellKind::Lstm {
        vec![0.0; (steps + 1) * hu]
    } else {
        Vec::new()
    };
    let mut gates = vec![0.0; steps * g * hu];
    let mut reset_h = if kind == CellKind::Gru {
        vec![0.0; steps * hu]
    } else {
        Vec::new()
    };
    let (wx, wh, b) = (w.wx.data(), w.wh.data(), w.b.data());
    let mut pre = vec![0.0; g * hu];
    for t in 0..steps {
        let xt = &x[t * d..(t + 1) * d];
        pre.copy_from_slice(b);
        matvec_add(&mut pre, wx, d, xt);
        let (h_prev, h_rest) = h.split_at_mut((t + 1) * hu);
        let h_prev = &h_prev[t * hu..];
        let h_next = &mut h_rest[..hu];
        let gt = &mut gates[t * g * hu..(t + 1) * g * hu];
        match kind {
            CellKind::Lstm => {
                matvec_add(&mut pre, wh, hu, h_prev);
                for k in 0..hu {
                    let i = sigmoid(pre[k]);
                    let f = sigmoid(pre[hu + k]);
                    let cand = pre[2 * hu + k].tanh();
                    let o = sigmoid(pre[3 * hu + k]);
                    let c_new = f * c[t * hu + k] + i * cand;
                    c[(t + 1) * hu + k] = c_new;
                    h_next[k] = o * c_new.tanh();
                    gt[k] = i;
                    gt[hu + k] = f;
                    gt[2 * hu + k] = cand;
                    gt[3 * hu + k] = o;
                }
            }
            CellKind::Gru => {
                // update and reset gates see h_prev directly
                matvec_add(&mut pre[..2 * hu], &wh[..2 * hu * hu], hu, h_prev);
                for k in 0..2 * hu {
                    gt[k] = sigmoid(pre[k]);
                }
                let rh = &mut reset_h[t * hu..(t + 1) * hu];
                for k in 0..hu {
                    rh[k] = gt[hu + k] * h_prev[k];
                }
                matvec_add(&mut pre[2 * hu..], &wh[2 * hu * hu..], hu, rh);
                for k in 0..hu {
                    let n = pre[2 * hu + k].tanh();
                    gt[2 * hu + k] = n;
                    let z = gt[k];
                    h_next[k] = (1.0 - z) * n + z * h_prev[k];
                }
            }
        }
    }
    let cache = RecurrentCache {
        kind,
        steps,
        input_dim: d,
        units,
        x: x.to_vec(),
        h,
        c,
        gates,
        reset_h,
    };
    Ok((cache.outputs().to_vec(), cache))
}

/// Backpropagation through time. `dh` is the gradient with respect to every
/// output hidden state, `(steps, H)`.
pub fn recurrent_backward(cache: &RecurrentCache, w: RecurrentWeights, dh: &[f64]) -> RecurrentGrads {
    let (steps, d, hu, kind) = (cache.steps, cache.input_dim, cache.units, cache.kind);
    let g = kind.gates();
    let (wx, wh) = (w.wx.data(), w.wh.data());
    let mut grads = RecurrentGrads {
        dx: vec![0.0; steps * d],
        dwx: vec![0.0; g * hu * d],
        dwh: vec![0.0; g * hu * hu],
        db: vec![0.0; g * hu],
    };
    let mut dh_next = vec![0.0; hu];
    let mut dc_next = vec![0.0; hu];
    let mut da = vec![0.0; g * hu];
    for t in (0..steps).rev() {
        let gt = &cache.gates[t * g * hu..(t + 1) * g * hu];
        let h_prev = &cache.h[t * hu..(t + 1) * hu];
        let mut dh_prev = vec![0.0; hu];
        match kind {
            CellKind::Lstm => {
                let c_prev = &cache.c[t * hu..(t + 1) * hu];
                let c_now = &cache.c[(t + 1) * hu..(t + 2) * hu];
                for k in 0..hu {
                    let (i, f, cand, o) = (gt[k], gt[hu + k], gt[2 * hu + k], gt[3 * hu + k]);
                    let dhk = dh[t * hu + k] + dh_next[k];
                    let tc = c_now[k].tanh();
                    let dc = dhk * o * (1.0 - tc * tc) + dc_next[k];
                    da[k] = dc * cand * i * (1.0 - i);
                    da[hu + k] = dc * c_prev[k] * f * (1.0 - f);
                    da[2 * hu + k] = dc * i * (1.0 - cand * cand);
                    da[3 * hu + k] = dhk * tc * o * (1.0 - o);
                    dc_next[k] = dc * f;
                }
                matvec_t_add(&mut dh_prev, wh, &da);
                outer_add(&mut grads.dwh, &da, h_prev);
            }
            CellKind::Gru => {
                let rh = &cache.reset_h[t * hu..(t + 1) * hu];
                for k in 0..hu {
                    let (z, n) = (gt[k], gt[2 * hu + k]);
                    let dhk = dh[t * hu + k] + dh_next[k];
                    da[k] = dhk * (h_prev[k] - n) * z * (1.0 - z);
                    da[2 * hu + k] = dhk * (1.0 - z) * (1.0 - n * n);
                    dh_prev[k] = dhk * z;
                }
                // candidate path through r * h_prev
                let mut d_rh = vec![0.0; hu];
                matvec_t_add(&mut d_rh, &wh[2 * hu * hu..], &da[2 * hu..]);
                outer_add(&mut grads.dwh[2 * hu * hu..], &da[2 * hu..], rh);
                for k in 0..hu {
                    let r = gt[hu + k];
                    da[hu + k] = d_rh[k] * h_prev[k] * r * (1.0 - r);
                    dh_prev[k] += d_rh[k] * r;
                }
                matvec_t_add(&mut dh_prev, &wh[..2 * hu * hu], &da[..2 * hu]);
                outer_add(&mut grads.dwh[..2 * hu * hu], &da[..2 * hu], h_prev);
            }
        }
        let xt = &cache.x[t * d..(t + 1) * d];
        outer_add(&mut grads.dwx, &da, xt);
        for (acc, v) in grads.db.iter_mut().zip(&da) {
            *acc += v;
        }
        matvec_t_add(&mut grads.dx[t * d..(t + 1) * d], wx, &da);
        dh_next = dh_prev;
    }
    grads
}

#[derive(Clone, Debug)]
pub struct BidirectionalCache {
    forward: RecurrentCache,
    backward: RecurrentCache,
}

impl BidirectionalCache {
    pub fn units(&self) -> usize {
        self.forward.units
    }

    pub fn steps(&self) -> usize {
        self.forward.steps
    }
}

fn reverse_steps(x: &[f64], steps: usize, width: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(x.len());
    for t in (0..steps).rev() {
        out.extend_from_slice(&x[t * width..(t + 1) * width]);
    }
    out
}

/// Runs one direction over `x` and another over the time-reversed `x`; output
/// step `t` is `[h_fwd(t), h_bwd(t)]` with the backward states re-reversed
/// into input order, `(steps, 2H)`.
pub fn bidirectional_forward(
    kind: CellKind,
    x: &[f64],
    steps: usize,
    fwd: RecurrentWeights,
    bwd: RecurrentWeights,
) -> Result<(Vec<f64>, BidirectionalCache)> {
    let (hf, cf) = recurrent_forward(kind, x, steps, fwd)?;
    let d = x.len() / steps;
    let (hb, cb) = recurrent_forward(kind, &reverse_steps(x, steps, d), steps, bwd)?;
    let hu = cf.units;
    let mut out = Vec::with_capacity(steps * 2 * hu);
    for t in 0..steps {
        out.extend_from_slice(&hf[t * hu..(t + 1) * hu]);
        let tb = steps - 1 - t;
        out.extend_from_slice(&hb[tb * hu..(tb + 1) * hu]);
    }
    Ok((
        out,
        BidirectionalCache {
            forward: cf,
            backward: cb,
        },
    ))
}

pub fn bidirectional_backward(
    cache: &BidirectionalCache,
    fwd: RecurrentWeights,
    bwd: RecurrentWeights,
    dout: &[f64],
) -> (Vec<f64>, RecurrentGrads, RecurrentGrads) {
    let (steps, hu) = (cache.steps(), cache.units());
    let mut dhf = vec![0.0; steps * hu];
    let mut dhb = vec![0.0; steps * hu];
    for t in 0..steps {
        let row = &dout[t * 2 * hu..(t + 1) * 2 * hu];
        dhf[t * hu..(t + 1) * hu].copy_from_slice(&row[..hu]);
        let tb = steps - 1 - t;
        dhb[tb * hu..(tb + 1) * hu].copy_from_slice(&row[hu..]);
    }
    let gf = recurrent_backward(&cache.forward, fwd, &dhf);
    let gb = recurrent_backward(&cache.backward, bwd, &dhb);
    let d = cache.forward.input_dim;
    let mut dx = gf.dx.clone();
    for t in 0..steps {
        let tb = steps - 1 - t;
        for k in 0..d {
            dx[t * d + k] += gb.dx[tb * d + k];
        }
    }
    (dx, gf, gb)
}

/// Summary vector of a bidirectional output sequence: the forward state after
/// the last step joined with the backward state after it has consumed the
/// whole (reversed) sequence.
pub fn bidirectional_final(out: &[f64], steps: usize, units: usize) -> Vec<f64> {
    let mut v = out[(steps - 1) * 2 * units..(steps - 1) * 2 * units + units].to_vec();
    v.extend_from_slice(&out[units..2 * units]);
    v
}

/// Scatters the gradient of [`bidirectional_final`] back onto the sequence.
pub fn bidirectional_final_backward(dfinal: &[f64], steps: usize, units: usize) -> Vec<f64> {
    let mut dout = vec![0.0; steps * 2 * units];
    let last = (steps - 1) * 2 * units;
    for k in 0..units {
        dout[last + k] += dfinal[k];
        dout[units + k] += dfinal[units + k];
    }
    dout
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neuralnet::layers::sigmoid;

    fn weights(kind: CellKind, h: usize, d: usize, scale: f64) -> (Tensor, Tensor, Tensor) {
        let g = kind.gates();
        let wx = (0..g * h * d).map(|i| scale * ((i as f64 * 0.7).sin())).collect();
        let wh = (0..g * h * h).map(|i| scale * ((i as f64 * 1.3).cos())).collect();
        let b = (0..g * h).map(|i| 0.1 * (i as f64).sin()).collect();
        (
            Tensor::new(vec![g * h, d], wx).unwrap(),
            Tensor::new(vec![g * h, h], wh).unwrap(),
            Tensor::new(vec![g * h], b).unwrap(),
        )
    }

    #[test]
    fn zero_lstm_stays_zero() {
        let (wx, wh, b) = (
            Tensor::zeros(&[4 * 64, 3]),
            Tensor::zeros(&[4 * 64, 64]),
            Tensor::zeros(&[4 * 64]),
        );
        let w = RecurrentWeights { wx: &wx, wh: &wh, b: &b };
        let x = vec![0.7; 5 * 3];
        let (h, _) = recurrent_forward(CellKind::Lstm, &x, 5, w).unwrap();
        assert_eq!(h.len(), 5 * 64);
        assert!(h.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_lstm_step_by_hand() {
        // one unit, one input: gates see only x and the bias
        let wx = Tensor::new(vec![4, 1], vec![0.5, -0.3, 0.8, 0.2]).unwrap();
        let wh = Tensor::new(vec![4, 1], vec![0.1, 0.1, 0.1, 0.1]).unwrap();
        let b = Tensor::new(vec![4], vec![0.0, 1.0, 0.0, -0.5]).unwrap();
        let w = RecurrentWeights { wx: &wx, wh: &wh, b: &b };
        let x = 2.0;
        let (h, _) = recurrent_forward(CellKind::Lstm, &[x], 1, w).unwrap();
        let i = sigmoid(0.5 * x);
        let cand = (0.8 * x).tanh();
        let o = sigmoid(0.2 * x - 0.5);
        // forget gate multiplies c_0 = 0
        let expect = o * (i * cand).tanh();
        assert!((h[0] - expect).abs() < 1e-15);
    }

    #[test]
    fn single_gru_step_by_hand() {
        let wx = Tensor::new(vec![3, 1], vec![0.4, 0.9, -0.6]).unwrap();
        let wh = Tensor::new(vec![3, 1], vec![0.3, 0.3, 0.3]).unwrap();
        let b = Tensor::new(vec![3], vec![0.1, 0.0, 0.2]).unwrap();
        let w = RecurrentWeights { wx: &wx, wh: &wh, b: &b };
        let (h, _) = recurrent_forward(CellKind::Gru, &[1.5], 1, w).unwrap();
        let z = sigmoid(0.4 * 1.5 + 0.1);
        let n = (-0.6f64 * 1.5 + 0.2).tanh();
        assert!((h[0] - (1.0 - z) * n).abs() < 1e-15);
    }

    #[test]
    fn bidirectional_width_and_order() {
        let (wx, wh, b) = weights(CellKind::Lstm, 64, 1, 0.1);
        let w = RecurrentWeights { wx: &wx, wh: &wh, b: &b };
        let x = [0.1, 0.5, 0.9, 0.3];
        let (out, _) = bidirectional_forward(CellKind::Lstm, &x, 4, w, w).unwrap();
        assert_eq!(out.len(), 4 * 128);
        // with shared weights, the backward half at step t equals the
        // forward pass over the reversed input
        let rev = [0.3, 0.9, 0.5, 0.1];
        let (hr, _) = recurrent_forward(CellKind::Lstm, &rev, 4, w).unwrap();
        assert_eq!(&out[64..128], &hr[3 * 64..4 * 64]);
        let fin = bidirectional_final(&out, 4, 64);
        assert_eq!(fin.len(), 128);
        assert_eq!(&fin[64..], &hr[3 * 64..]);
    }

    #[test]
    fn shape_errors() {
        let (wx, wh, b) = weights(CellKind::Lstm, 2, 3, 0.1);
        let w = RecurrentWeights { wx: &wx, wh: &wh, b: &b };
        assert!(recurrent_forward(CellKind::Lstm, &[1.0; 4], 2, w).is_err());
        assert!(recurrent_forward(CellKind::Lstm, &[], 0, w).is_err());
        assert!(recurrent_forward(CellKind::Gru, &[1.0; 6], 2, w).is_err());
    }
}
