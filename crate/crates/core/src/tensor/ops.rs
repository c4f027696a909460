//! Forward and backward kernels for the layer set of the matching network.
//!
//! Every function here is pure: inputs are borrowed, outputs are fresh
//! tensors. The tape wires these together and owns the bookkeeping.

use rand::Rng;

use super::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Floor applied to probabilities before the logarithm in cross-entropy.
pub const PROB_FLOOR: f64 = 1e-12;

fn expect_rank<T: Scalar>(op: &'static str, name: &str, t: &Tensor<T>, rank: usize) -> Result<()> {
    if t.dims().len() != rank {
        return Err(Error::dim(op, format!("{name} rank"), rank, t.dims().len()));
    }
    Ok(())
}

fn check_finite<T: Scalar>(t: Tensor<T>, op: &str) -> Result<Tensor<T>> {
    t.ensure_finite(op)?;
    Ok(t)
}

pub(crate) fn conv_out_extent(size: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    let padded = size + 2 * padding;
    if stride == 0 || kernel == 0 || padded < kernel {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

/// Range of output columns `o` for which `o * stride + k - pad` lies in `0..size`.
fn valid_range(out: usize, size: usize, k: usize, stride: usize, pad: usize) -> (usize, usize) {
    // smallest o with o*stride + k >= pad
    let lo = if k >= pad { 0 } else { (pad - k).div_ceil(stride) };
    // largest o with o*stride + k - pad <= size - 1
    let hi = if size + pad < k + 1 {
        0
    } else {
        ((size + pad - k - 1) / stride + 1).min(out)
    };
    (lo.min(hi), hi)
}

/// Shapes of one convolution, for unfolding the input into columns.
struct ConvGeometry {
    c_in: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    padding: usize,
    ho: usize,
    wo: usize,
}

impl ConvGeometry {
    /// Calls `f(q, i)` for every column entry `q` (tap-major) that reads
    /// a real input pixel `i`.
    fn for_each_tap(&self, mut f: impl FnMut(usize, usize)) {
        let p = self.ho * self.wo;
        for ci in 0..self.c_in {
            for ky in 0..self.kh {
                let (oy_lo, oy_hi) = valid_range(self.ho, self.h, ky, self.stride, self.padding);
                for kx in 0..self.kw {
                    let r = (ci * self.kh + ky) * self.kw + kx;
                    let (ox_lo, ox_hi) = valid_range(self.wo, self.w, kx, self.stride, self.padding);
                    for oy in oy_lo..oy_hi {
                        let row = ci * self.h * self.w + (oy * self.stride + ky - self.padding) * self.w;
                        for ox in ox_lo..ox_hi {
                            f(r * p + oy * self.wo + ox, row + ox * self.stride + kx - self.padding);
                        }
                    }
                }
            }
        }
    }

    /// `[C_in·kH·kW, H_out·W_out]` matrix of input values, zero over padding.
    fn im2col<T: Scalar>(&self, x: &[T]) -> Vec<T> {
        let mut cols = vec![T::zero(); self.c_in * self.kh * self.kw * self.ho * self.wo];
        self.for_each_tap(|q, i| cols[q] = x[i]);
        cols
    }

    /// Adjoint of [`ConvGeometry::im2col`].
    fn col2im<T: Scalar>(&self, cols: &[T]) -> Vec<T> {
        let mut x = vec![T::zero(); self.c_in * self.h * self.w];
        self.for_each_tap(|q, i| x[i] = x[i] + cols[q]);
        x
    }
}

/// 2-D cross-correlation of a `[C_in, H, W]` input with `[C_out, C_in, kH, kW]`
/// kernels. Each output accumulates `bias`, then the products in
/// `(c_in, ky, kx)` order.
pub fn conv2d_forward<T: Scalar>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    bias: &Tensor<T>,
    stride: usize,
    padding: usize,
) -> Result<Tensor<T>> {
    const OP: &str = "conv2d";
    expect_rank(OP, "input", input, 3)?;
    expect_rank(OP, "kernel", kernel, 4)?;
    expect_rank(OP, "bias", bias, 1)?;
    let (c_in, h, w) = (input.dims()[0], input.dims()[1], input.dims()[2]);
    let (c_out, kc, kh, kw) = (
        kernel.dims()[0],
        kernel.dims()[1],
        kernel.dims()[2],
        kernel.dims()[3],
    );
    if kc != c_in {
        return Err(Error::dim(OP, "input channels", kc, c_in));
    }
    if bias.len() != c_out {
        return Err(Error::dim(OP, "bias length", c_out, bias.len()));
    }
    if stride == 0 {
        return Err(Error::dim(OP, "stride", ">= 1", 0));
    }
    let ho = conv_out_extent(h, kh, stride, padding)
        .ok_or_else(|| Error::dim(OP, "height", format!(">= {kh} after padding"), h + 2 * padding))?;
    let wo = conv_out_extent(w, kw, stride, padding)
        .ok_or_else(|| Error::dim(OP, "width", format!(">= {kw} after padding"), w + 2 * padding))?;

    let geo = ConvGeometry {
        c_in,
        h,
        w,
        kh,
        kw,
        stride,
        padding,
        ho,
        wo,
    };
    let cols = geo.im2col(input.data());
    let (kk, p) = (c_in * kh * kw, ho * wo);
    let k = kernel.data();
    let mut out = vec![T::zero(); c_out * p];
    for (co, plane) in out.chunks_exact_mut(p).enumerate() {
        plane.fill(bias.data()[co]);
        for (r, &kv) in k[co * kk..(co + 1) * kk].iter().enumerate() {
            for (o, &v) in plane.iter_mut().zip(&cols[r * p..(r + 1) * p]) {
                *o = *o + v * kv;
            }
        }
    }
    check_finite(Tensor::new(vec![c_out, ho, wo], out)?, OP)
}

pub struct ConvGrads<T> {
    pub input: Option<Vec<T>>,
    pub kernel: Vec<T>,
    pub bias: Vec<T>,
}

/// Gradients of [`conv2d_forward`] given the upstream gradient of its output.
pub fn conv2d_backward<T: Scalar>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    stride: usize,
    padding: usize,
    grad_out: &[T],
    want_input: bool,
) -> ConvGrads<T> {
    let (c_in, h, w) = (input.dims()[0], input.dims()[1], input.dims()[2]);
    let (c_out, _, kh, kw) = (
        kernel.dims()[0],
        kernel.dims()[1],
        kernel.dims()[2],
        kernel.dims()[3],
    );
    let ho = conv_out_extent(h, kh, stride, padding).expect("validated in forward");
    let wo = conv_out_extent(w, kw, stride, padding).expect("validated in forward");
    let geo = ConvGeometry {
        c_in,
        h,
        w,
        kh,
        kw,
        stride,
        padding,
        ho,
        wo,
    };
    let cols = geo.im2col(input.data());
    let (kk, p) = (c_in * kh * kw, ho * wo);
    let k = kernel.data();

    let mut gk = vec![T::zero(); k.len()];
    let mut gb = vec![T::zero(); c_out];
    let mut gcols = want_input.then(|| vec![T::zero(); kk * p]);
    for co in 0..c_out {
        let g = &grad_out[co * p..(co + 1) * p];
        gb[co] = g.iter().copied().sum();
        for r in 0..kk {
            gk[co * kk + r] = dot(g, &cols[r * p..(r + 1) * p]);
        }
        if let Some(gc) = gcols.as_mut() {
            for (r, &kv) in k[co * kk..(co + 1) * kk].iter().enumerate() {
                for (d, &gv) in gc[r * p..(r + 1) * p].iter_mut().zip(g) {
                    *d = *d + gv * kv;
                }
            }
        }
    }
    let gx = gcols.map(|gc| geo.col2im(&gc));
    ConvGrads {
        input: gx,
        kernel: gk,
        bias: gb,
    }
}

/// Dot product with four interleaved partial sums.
fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    let mut acc = [T::zero(); 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for k in 0..4 {
            acc[k] = acc[k] + x[k] * y[k];
        }
    }
    let tail = ra.iter().zip(rb).fold(T::zero(), |s, (&x, &y)| s + x * y);
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Max pooling over `window × window` cells without padding. Returns the
/// pooled tensor and, per output cell, the flat input index of its maximum
/// (lowest index wins ties).
pub fn maxpool2d_forward<T: Scalar>(
    input: &Tensor<T>,
    window: usize,
    stride: usize,
) -> Result<(Tensor<T>, Vec<usize>)> {
    const OP: &str = "maxpool2d";
    expect_rank(OP, "input", input, 3)?;
    let (c, h, w) = (input.dims()[0], input.dims()[1], input.dims()[2]);
    if window == 0 || stride == 0 {
        return Err(Error::dim(OP, "window/stride", ">= 1", 0));
    }
    if window > h {
        return Err(Error::dim(OP, "height", format!(">= window {window}"), h));
    }
    if window > w {
        return Err(Error::dim(OP, "width", format!(">= window {window}"), w));
    }
    let ho = (h - window) / stride + 1;
    let wo = (w - window) / stride + 1;
    let x = input.data();
    let mut out = Vec::with_capacity(c * ho * wo);
    let mut argmax = Vec::with_capacity(c * ho * wo);
    for ch in 0..c {
        for oy in 0..ho {
            for ox in 0..wo {
                let mut best_idx = (ch * h + oy * stride) * w + ox * stride;
                let mut best = x[best_idx];
                for dy in 0..window {
                    let row = (ch * h + oy * stride + dy) * w + ox * stride;
                    for dx in 0..window {
                        let v = x[row + dx];
                        if v > best {
                            best = v;
                            best_idx = row + dx;
                        }
                    }
                }
                out.push(best);
                argmax.push(best_idx);
            }
        }
    }
    Ok((check_finite(Tensor::new(vec![c, ho, wo], out)?, OP)?, argmax))
}

/// Routes each output gradient to its stored argmax cell.
pub fn maxpool2d_backward<T: Scalar>(input_len: usize, argmax: &[usize], grad_out: &[T]) -> Vec<T> {
    let mut gx = vec![T::zero(); input_len];
    for (&idx, &g) in argmax.iter().zip(grad_out) {
        gx[idx] = gx[idx] + g;
    }
    gx
}

/// `weight · input + bias` for `weight: [M, N]`, `input: [N]`.
pub fn fc_forward<T: Scalar>(input: &Tensor<T>, weight: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>> {
    const OP: &str = "fully-connected";
    expect_rank(OP, "weight", weight, 2)?;
    expect_rank(OP, "bias", bias, 1)?;
    let (m, n) = (weight.dims()[0], weight.dims()[1]);
    if input.len() != n {
        return Err(Error::dim(OP, "input length", n, input.len()));
    }
    if bias.len() != m {
        return Err(Error::dim(OP, "bias length", m, bias.len()));
    }
    let x = input.data();
    let out = weight
        .data()
        .chunks_exact(n)
        .zip(bias.data())
        .map(|(row, &b)| row.iter().zip(x).fold(T::zero(), |acc, (&wv, &xv)| acc + wv * xv) + b)
        .collect();
    check_finite(Tensor::new(vec![m], out)?, OP)
}

pub struct FcGrads<T> {
    pub input: Option<Vec<T>>,
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

pub fn fc_backward<T: Scalar>(input: &Tensor<T>, weight: &Tensor<T>, grad_out: &[T], want_input: bool) -> FcGrads<T> {
    let n = weight.dims()[1];
    let x = input.data();
    let mut gw = Vec::with_capacity(weight.len());
    for &g in grad_out {
        gw.extend(x.iter().map(|&xv| g * xv));
    }
    let gx = want_input.then(|| {
        let mut gx = vec![T::zero(); n];
        for (row, &g) in weight.data().chunks_exact(n).zip(grad_out) {
            for (a, &wv) in gx.iter_mut().zip(row) {
                *a = *a + wv * g;
            }
        }
        gx
    });
    FcGrads {
        input: gx,
        weight: gw,
        bias: grad_out.to_vec(),
    }
}

pub fn relu_forward<T: Scalar>(input: &Tensor<T>) -> Tensor<T> {
    input.map(|v| if v > T::zero() { v } else { T::zero() })
}

pub fn relu_backward<T: Scalar>(input: &Tensor<T>, grad_out: &[T]) -> Vec<T> {
    input
        .data()
        .iter()
        .zip(grad_out)
        .map(|(&x, &g)| if x > T::zero() { g } else { T::zero() })
        .collect()
}

/// Softmax over the last axis with max subtraction.
pub fn softmax<T: Scalar>(logits: &Tensor<T>) -> Result<Tensor<T>> {
    const OP: &str = "softmax";
    let k = *logits.dims().last().expect("rank >= 1");
    if k < 2 {
        return Err(Error::dim(OP, "classes", ">= 2", k));
    }
    logits.ensure_finite("softmax logits")?;
    let mut out = Vec::with_capacity(logits.len());
    for row in logits.data().chunks_exact(k) {
        let m = row.iter().copied().fold(T::neg_infinity(), T::max);
        let e: Vec<T> = row.iter().map(|&v| (v - m).exp()).collect();
        let s: T = e.iter().copied().sum();
        out.extend(e.into_iter().map(|v| v / s));
    }
    check_finite(Tensor::new(logits.dims().to_vec(), out)?, OP)
}

pub fn softmax_backward<T: Scalar>(probs: &Tensor<T>, grad_out: &[T]) -> Vec<T> {
    let k = *probs.dims().last().expect("rank >= 1");
    let mut gz = Vec::with_capacity(probs.len());
    for (s, g) in probs.data().chunks_exact(k).zip(grad_out.chunks_exact(k)) {
        let dot: T = s.iter().zip(g).map(|(&a, &b)| a * b).sum();
        gz.extend(s.iter().zip(g).map(|(&si, &gi)| si * (gi - dot)));
    }
    gz
}

fn check_ce_inputs<T: Scalar>(probabilities: &Tensor<T>, labels: &[u8]) -> Result<(usize, usize)> {
    const OP: &str = "cross-entropy";
    let (b, k) = match probabilities.dims() {
        [k] => (1, *k),
        [b, k] => (*b, *k),
        d => return Err(Error::dim(OP, "probabilities rank", "1 or 2", d.len())),
    };
    if k != 2 {
        return Err(Error::dim(OP, "classes", 2, k));
    }
    if labels.len() != b {
        return Err(Error::dim(OP, "labels", b, labels.len()));
    }
    if let Some(bad) = labels.iter().find(|&&l| l > 1) {
        return Err(Error::Validation(format!("label {bad} is not in {{0, 1}}")));
    }
    for (i, row) in probabilities.data().chunks_exact(k).enumerate() {
        let s: f64 = row.iter().map(|v| v.as_f64()).sum();
        if (s - 1.0).abs() > 1e-6 {
            return Err(Error::Validation(format!("probability row {i} sums to {s}")));
        }
    }
    Ok((b, k))
}

/// Mean over the batch of `-ln p[label]`, with `p` floored at [`PROB_FLOOR`].
pub fn cross_entropy_loss<T: Scalar>(probabilities: &Tensor<T>, labels: &[u8]) -> Result<T> {
    let (b, k) = check_ce_inputs(probabilities, labels)?;
    let floor = T::c(PROB_FLOOR);
    let total: T = probabilities
        .data()
        .chunks_exact(k)
        .zip(labels)
        .map(|(row, &l)| -row[l as usize].max(floor).ln())
        .sum();
    Ok(total / T::c(b as f64))
}

pub(crate) fn cross_entropy_backward<T: Scalar>(probabilities: &Tensor<T>, labels: &[u8], upstream: T) -> Vec<T> {
    let k = *probabilities.dims().last().expect("rank >= 1");
    let b = T::c(labels.len() as f64);
    let floor = T::c(PROB_FLOOR);
    let mut g = vec![T::zero(); probabilities.len()];
    for (i, &l) in labels.iter().enumerate() {
        let p = probabilities.data()[i * k + l as usize];
        if p > floor {
            g[i * k + l as usize] = -upstream / (b * p);
        }
    }
    g
}

pub(crate) fn validate_ce<T: Scalar>(probabilities: &Tensor<T>, labels: &[u8]) -> Result<()> {
    check_ce_inputs(probabilities, labels).map(|_| ())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    Train,
    Eval,
}

/// Inverted dropout. Returns the output and the per-element multiplier
/// (0 or `1/(1-rate)` in training, 1 in evaluation) kept for backward.
pub fn dropout_forward<T: Scalar, R: Rng + ?Sized>(
    input: &Tensor<T>,
    rate: f64,
    phase: Phase,
    rng: &mut R,
) -> Result<(Tensor<T>, Vec<T>)> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::Validation(format!("dropout rate {rate} outside [0, 1)")));
    }
    if phase == Phase::Eval || rate == 0.0 {
        return Ok((input.clone(), vec![T::one(); input.len()]));
    }
    let keep = T::c(1.0 / (1.0 - rate));
    let mask: Vec<T> = (0..input.len())
        .map(|_| if rng.random::<f64>() < rate { T::zero() } else { keep })
        .collect();
    let data = input.data().iter().zip(&mask).map(|(&x, &m)| x * m).collect();
    Ok((Tensor::new(input.dims().to_vec(), data)?, mask))
}
