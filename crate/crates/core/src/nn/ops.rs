//! Layer kernels and their backward passes.
//!
//! Images are `C×H×W` tensors. Convolution is cross-correlation (no kernel
//! flip) lowered to a matrix product over an im2col buffer; the buffer is
//! kept for the backward pass.

use super::gemm::gemm;
use super::Tensor;
use crate::error::{Error, Result};
use crate::rng::{self, Rng};

/// `floor((n + 2·pad − k) / stride) + 1`, or `None` when the kernel does not
/// fit.
pub fn conv_output_len(n: usize, k: usize, stride: usize, pad: usize) -> Option<usize> {
    let padded = n + 2 * pad;
    (stride > 0 && padded >= k).then(|| (padded - k) / stride + 1)
}

#[derive(Clone, Copy, Debug)]
struct ConvGeom {
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
}

impl ConvGeom {
    fn new(input: &[usize], weights: &[usize], stride: usize, pad: usize) -> Result<Self> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        let (c, h, w) = match input {
            &[c, h, w] => (c, h, w),
            _ => return bad(format!("conv input must be C×H×W, got {input:?}")),
        };
        let (wc, k) = match weights {
            &[_, wc, k1, k2] if k1 == k2 => (wc, k1),
            _ => return bad(format!("conv weights must be O×C×k×k, got {weights:?}")),
        };
        if wc != c {
            return bad(format!("weights expect {wc} input channels, input has {c}"));
        }
        let (Some(oh), Some(ow)) = (
            conv_output_len(h, k, stride, pad),
            conv_output_len(w, k, stride, pad),
        ) else {
            return bad(format!(
                "kernel {k} with stride {stride}, pad {pad} does not fit {h}×{w}"
            ));
        };
        Ok(Self {
            c,
            h,
            w,
            k,
            stride,
            pad,
            oh,
            ow,
        })
    }

    fn patch_len(&self) -> usize {
        self.c * self.k * self.k
    }

    fn out_len(&self) -> usize {
        self.oh * self.ow
    }

    /// Source index along one axis, or `None` when it falls in the padding.
    fn src(&self, out: usize, tap: usize, n: usize) -> Option<usize> {
        (out * self.stride + tap)
            .checked_sub(self.pad)
            .filter(|&v| v < n)
    }
}

fn im2col(input: &[f64], g: &ConvGeom) -> Vec<f64> {
    let cols_n = g.out_len();
    let mut cols = vec![0.0; g.patch_len() * cols_n];
    for c in 0..g.c {
        let plane = &input[c * g.h * g.w..(c + 1) * g.h * g.w];
        for i in 0..g.k {
            for j in 0..g.k {
                let row = (c * g.k + i) * g.k + j;
                let dst = &mut cols[row * cols_n..(row + 1) * cols_n];
                for y in 0..g.oh {
                    let Some(iy) = g.src(y, i, g.h) else { continue };
                    let src_row = &plane[iy * g.w..(iy + 1) * g.w];
                    let dst_row = &mut dst[y * g.ow..(y + 1) * g.ow];
                    for (x, d) in dst_row.iter_mut().enumerate() {
                        if let Some(ix) = g.src(x, j, g.w) {
                            *d = src_row[ix];
                        }
                    }
                }
            }
        }
    }
    cols
}

fn col2im(cols: &[f64], g: &ConvGeom) -> Vec<f64> {
    let cols_n = g.out_len();
    let mut out = vec![0.0; g.c * g.h * g.w];
    for c in 0..g.c {
        let plane = &mut out[c * g.h * g.w..(c + 1) * g.h * g.w];
        for i in 0..g.k {
            for j in 0..g.k {
                let row = (c * g.k + i) * g.k + j;
                let src = &cols[row * cols_n..(row + 1) * cols_n];
                for y in 0..g.oh {
                    let Some(iy) = g.src(y, i, g.h) else { continue };
                    let dst_row = &mut plane[iy * g.w..(iy + 1) * g.w];
                    for x in 0..g.ow {
                        if let Some(ix) = g.src(x, j, g.w) {
                            dst_row[ix] += src[y * g.ow + x];
                        }
                    }
                }
            }
        }
    }
    out
}

/// `out[o,y,x] = bias[o] + Σ input[c, y·s+i−pad, x·s+j−pad] · weights[o,c,i,j]`
/// with out-of-range input read as zero.
pub fn conv2d(
    input: &Tensor,
    weights: &Tensor,
    bias: &[f64],
    stride: usize,
    pad: usize,
) -> Result<Tensor> {
    conv2d_with_cols(input, weights, bias, stride, pad).map(|(out, _)| out)
}

/// [`conv2d`] that also returns the im2col buffer needed by [`conv2d_backward`].
pub fn conv2d_with_cols(
    input: &Tensor,
    weights: &Tensor,
    bias: &[f64],
    stride: usize,
    pad: usize,
) -> Result<(Tensor, Vec<f64>)> {
    let g = ConvGeom::new(input.shape(), weights.shape(), stride, pad)?;
    let o = weights.shape()[0];
    if bias.len() != o {
        return Err(Error::InvalidArgument(format!(
            "bias has {} entries for {o} output channels",
            bias.len()
        )));
    }
    let cols = im2col(input.data(), &g);
    let n = g.out_len();
    let mut out = vec![0.0; o * n];
    for (row, &b) in out.chunks_mut(n).zip(bias) {
        row.fill(b);
    }
    gemm(o, g.patch_len(), n, weights.data(), false, &cols, false, 1.0, &mut out);
    Ok((Tensor::new(vec![o, g.oh, g.ow], out)?, cols))
}

pub struct ConvGrads {
    pub input: Option<Tensor>,
    pub weights: Tensor,
    pub bias: Vec<f64>,
}

/// Gradients of a convolution given the im2col buffer from the forward pass.
pub fn conv2d_backward(
    input_shape: &[usize],
    cols: &[f64],
    weights: &Tensor,
    grad_out: &Tensor,
    stride: usize,
    pad: usize,
    want_input: bool,
) -> Result<ConvGrads> {
    let g = ConvGeom::new(input_shape, weights.shape(), stride, pad)?;
    let o = weights.shape()[0];
    let n = g.out_len();
    if grad_out.shape() != [o, g.oh, g.ow] {
        return Err(Error::InvalidArgument(format!(
            "conv grad has shape {:?}, expected {:?}",
            grad_out.shape(),
            [o, g.oh, g.ow]
        )));
    }
    let go = grad_out.data();
    let mut gw = vec![0.0; o * g.patch_len()];
    gemm(o, n, g.patch_len(), go, false, cols, true, 0.0, &mut gw);
    let gb = go.chunks(n).map(|r| r.iter().sum()).collect();
    let input = if want_input {
        let mut gcols = vec![0.0; g.patch_len() * n];
        gemm(g.patch_len(), o, n, weights.data(), true, go, false, 0.0, &mut gcols);
        Some(Tensor::new(input_shape.to_vec(), col2im(&gcols, &g))?)
    } else {
        None
    };
    Ok(ConvGrads {
        input,
        weights: Tensor::new(weights.shape().to_vec(), gw)?,
        bias: gb,
    })
}

/// 2×2 max pooling with stride 2. Returns the pooled tensor and, per output
/// cell, the flat input index of the selected element (first maximum in
/// row-major window order).
pub fn maxpool2d(input: &Tensor) -> Result<(Tensor, Vec<usize>)> {
    let (c, h, w) = input
        .chw()
        .ok_or_else(|| Error::InvalidArgument(format!("maxpool input {:?}", input.shape())))?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::InvalidArgument(format!(
            "maxpool needs even height and width, got {h}×{w}"
        )));
    }
    let (oh, ow) = (h / 2, w / 2);
    let d = input.data();
    let mut out = Vec::with_capacity(c * oh * ow);
    let mut arg = Vec::with_capacity(c * oh * ow);
    for ch in 0..c {
        let base = ch * h * w;
        for y in 0..oh {
            for x in 0..ow {
                let mut best = base + 2 * y * w + 2 * x;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let idx = base + (2 * y + dy) * w + 2 * x + dx;
                    if d[idx] > d[best] {
                        best = idx;
                    }
                }
                out.push(d[best]);
                arg.push(best);
            }
        }
    }
    Ok((Tensor::new(vec![c, oh, ow], out)?, arg))
}

pub fn maxpool2d_backward(input_shape: &[usize], argmax: &[usize], grad_out: &Tensor) -> Tensor {
    let mut g = Tensor::zeros(input_shape);
    let gd = g.data_mut();
    for (&i, &v) in argmax.iter().zip(grad_out.data()) {
        gd[i] += v;
    }
    g
}

pub fn relu(t: &Tensor) -> Tensor {
    t.map(|v| v.max(0.0))
}

/// Passes gradient where the forward input was strictly positive.
pub fn relu_backward(input: &Tensor, grad_out: &Tensor) -> Tensor {
    let data = input
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&x, &g)| if x > 0.0 { g } else { 0.0 })
        .collect();
    Tensor::new(input.shape().to_vec(), data).expect("same shape")
}

pub fn global_avg_pool(t: &Tensor) -> Result<Vec<f64>> {
    let (c, h, w) = t
        .chw()
        .ok_or_else(|| Error::InvalidArgument(format!("pool input {:?}", t.shape())))?;
    let inv = 1.0 / (h * w) as f64;
    Ok((0..c)
        .map(|ch| t.data()[ch * h * w..(ch + 1) * h * w].iter().sum::<f64>() * inv)
        .collect())
}

pub fn global_avg_pool_backward(input_shape: &[usize], grad_out: &[f64]) -> Tensor {
    let hw: usize = input_shape[1..].iter().product();
    let inv = 1.0 / hw as f64;
    let data = grad_out
        .iter()
        .flat_map(|&g| std::iter::repeat_n(g * inv, hw))
        .collect();
    Tensor::new(input_shape.to_vec(), data).expect("shape")
}

/// Numerically stable softmax.
pub fn softmax(v: &[f64]) -> Result<Vec<f64>> {
    if v.is_empty() {
        return Err(Error::InvalidArgument("softmax of an empty vector".into()));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "softmax input not finite: {v:?}"
        )));
    }
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = v.iter().map(|&x| (x - m).exp()).collect();
    let s: f64 = e.iter().sum();
    Ok(e.into_iter().map(|x| x / s).collect())
}

pub fn softmax_backward(probs: &[f64], grad_out: &[f64]) -> Vec<f64> {
    let dot: f64 = probs.iter().zip(grad_out).map(|(p, g)| p * g).sum();
    probs
        .iter()
        .zip(grad_out)
        .map(|(p, g)| p * (g - dot))
        .collect()
}

/// Inverted dropout. In training mode each unit is zeroed with probability
/// `rate` and survivors are scaled by `1/(1−rate)`; the per-unit factors are
/// returned for the backward pass. In inference mode this is the identity.
pub fn dropout(v: &Tensor, rate: f64, rng: &mut Rng, training: bool) -> Result<(Tensor, Vec<f64>)> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::InvalidArgument(format!(
            "dropout rate must be in [0, 1), got {rate}"
        )));
    }
    if !training || rate == 0.0 {
        return Ok((v.clone(), vec![1.0; v.len()]));
    }
    let keep = 1.0 / (1.0 - rate);
    let mask: Vec<f64> = (0..v.len())
        .map(|_| if rng::unit(rng) < rate { 0.0 } else { keep })
        .collect();
    let out = v.data().iter().zip(&mask).map(|(x, m)| x * m).collect();
    Ok((Tensor::new(v.shape().to_vec(), out)?, mask))
}

pub fn dropout_backward(mask: &[f64], grad_out: &Tensor) -> Tensor {
    let data = grad_out.data().iter().zip(mask).map(|(g, m)| g * m).collect();
    Tensor::new(grad_out.shape().to_vec(), data).expect("shape")
}

/// `out = W·x + b` with `W` of shape `units × len(x)`.
pub fn dense(x: &[f64], weights: &Tensor, bias: &[f64]) -> Result<Vec<f64>> {
    let (units, n) = match weights.shape() {
        &[u, n] => (u, n),
        s => {
            return Err(Error::InvalidArgument(format!(
                "dense weights must be units×inputs, got {s:?}"
            )))
        }
    };
    if n != x.len() || bias.len() != units {
        return Err(Error::InvalidArgument(format!(
            "dense {units}×{n} applied to {} inputs with {} biases",
            x.len(),
            bias.len()
        )));
    }
    Ok(weights
        .data()
        .chunks(n)
        .zip(bias)
        .map(|(row, b)| b + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>())
        .collect())
}

pub struct DenseGrads {
    pub input: Vec<f64>,
    pub weights: Tensor,
    pub bias: Vec<f64>,
}

pub fn dense_backward(x: &[f64], weights: &Tensor, grad_out: &[f64]) -> DenseGrads {
    let n = x.len();
    let mut gw = Vec::with_capacity(grad_out.len() * n);
    for &g in grad_out {
        gw.extend(x.iter().map(|v| g * v));
    }
    let mut gx = vec![0.0; n];
    for (row, &g) in weights.data().chunks(n).zip(grad_out) {
        for (gi, w) in gx.iter_mut().zip(row) {
            *gi += w * g;
        }
    }
    DenseGrads {
        input: gx,
        weights: Tensor::new(weights.shape().to_vec(), gw).expect("shape"),
        bias: grad_out.to_vec(),
    }
}
