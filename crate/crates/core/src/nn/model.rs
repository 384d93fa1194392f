//! Layer specifications, parameters, and the composed forward/backward pass.

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::ops;
use super::Tensor;
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::train::cross_entropy;

/// Convolutions are 3×3 with same padding.
pub const KERNEL: usize = 3;
const PAD: usize = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Conv2d { out_channels: usize, stride: usize },
    MaxPool,
    Relu,
    GlobalAvgPool,
    Dense { units: usize },
    Dropout { rate: f64 },
    /// `x + conv(relu(conv(x)))`; the skip path is a strided 1×1 projection
    /// when the channel count or resolution changes. No activation is applied
    /// after the sum.
    Residual { out_channels: usize, stride: usize },
    Softmax,
}

impl LayerSpec {
    fn name(&self) -> &'static str {
        match self {
            LayerSpec::Conv2d { .. } => "conv2d",
            LayerSpec::MaxPool => "maxpool",
            LayerSpec::Relu => "relu",
            LayerSpec::GlobalAvgPool => "global_avg_pool",
            LayerSpec::Dense { .. } => "dense",
            LayerSpec::Dropout { .. } => "dropout",
            LayerSpec::Residual { .. } => "residual",
            LayerSpec::Softmax => "softmax",
        }
    }
}

fn needs_projection(in_channels: usize, out_channels: usize, stride: usize) -> bool {
    stride != 1 || in_channels != out_channels
}

fn layer_output_shape(idx: usize, layer: &LayerSpec, input: &[usize]) -> Result<Vec<usize>> {
    let err = |message: String| Error::Shape {
        layer: idx,
        message: format!("{}: {message}", layer.name()),
    };
    let chw = || match *input {
        [c, h, w] => Ok((c, h, w)),
        _ => Err(err(format!("expects C×H×W input, got {input:?}"))),
    };
    let strided = |n: usize, stride: usize| {
        ops::conv_output_len(n, KERNEL, stride, PAD)
            .ok_or_else(|| err(format!("extent {n} too small")))
    };
    match *layer {
        LayerSpec::Conv2d {
            out_channels,
            stride,
        }
        | LayerSpec::Residual {
            out_channels,
            stride,
        } => {
            let (_, h, w) = chw()?;
            if out_channels == 0 || !(1..=2).contains(&stride) {
                return Err(err(format!(
                    "needs out_channels ≥ 1 and stride 1 or 2, got {out_channels}/{stride}"
                )));
            }
            Ok(vec![out_channels, strided(h, stride)?, strided(w, stride)?])
        }
        LayerSpec::MaxPool => {
            let (c, h, w) = chw()?;
            if h % 2 != 0 || w % 2 != 0 {
                return Err(err(format!("needs even extents, got {h}×{w}")));
            }
            Ok(vec![c, h / 2, w / 2])
        }
        LayerSpec::Relu => Ok(input.to_vec()),
        LayerSpec::Dropout { rate } => {
            if !(0.0..1.0).contains(&rate) {
                return Err(err(format!("rate must be in [0, 1), got {rate}")));
            }
            Ok(input.to_vec())
        }
        LayerSpec::GlobalAvgPool => Ok(vec![chw()?.0]),
        LayerSpec::Dense { units } => {
            if units == 0 {
                return Err(err("units must be ≥ 1".into()));
            }
            Ok(vec![units])
        }
        LayerSpec::Softmax => match input {
            [n] => Ok(vec![*n]),
            _ => Err(err(format!("expects a vector, got {input:?}"))),
        },
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    /// `(channels, height, width)`.
    pub input_size: [usize; 3],
    pub layers: Vec<LayerSpec>,
}

impl ModelSpec {
    pub fn new(input_size: [usize; 3], layers: Vec<LayerSpec>) -> Result<Self> {
        let spec = Self { input_size, layers };
        spec.validate()?;
        Ok(spec)
    }

    /// Shape after every layer, computed without touching data.
    pub fn output_shapes(&self) -> Result<Vec<Vec<usize>>> {
        let mut shape = self.input_size.to_vec();
        if shape.contains(&0) {
            return Err(Error::Shape {
                layer: 0,
                message: format!("input size {shape:?} has a zero extent"),
            });
        }
        let mut out = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            shape = layer_output_shape(i, layer, &shape)?;
            out.push(shape.clone());
        }
        Ok(out)
    }

    /// Checks shape compatibility and that the network ends in a 2-way
    /// `Dense` followed by `Softmax`.
    pub fn validate(&self) -> Result<()> {
        self.output_shapes()?;
        let n = self.layers.len();
        let tail_ok = n >= 2
            && self.layers[n - 2] == LayerSpec::Dense { units: 2 }
            && self.layers[n - 1] == LayerSpec::Softmax;
        if !tail_ok {
            return Err(Error::Shape {
                layer: n.saturating_sub(1),
                message: "model must end with dense(2) then softmax".into(),
            });
        }
        if let Some(i) = self.layers[..n - 1]
            .iter()
            .position(|l| *l == LayerSpec::Softmax)
        {
            return Err(Error::Shape {
                layer: i,
                message: "softmax is only allowed as the final layer".into(),
            });
        }
        Ok(())
    }

    pub fn with_input_size(&self, input_size: [usize; 3]) -> Result<Self> {
        Self::new(input_size, self.layers.clone())
    }

    /// Index of the first layer after the global average pool; `0` when the
    /// model has none.
    pub fn head_start(&self) -> usize {
        self.layers
            .iter()
            .position(|l| *l == LayerSpec::GlobalAvgPool)
            .map_or(0, |i| i + 1)
    }

    /// Convolution and dense layers, counting both convolutions of every
    /// residual block and excluding projection shortcuts.
    pub fn weighted_layer_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| match l {
                LayerSpec::Conv2d { .. } | LayerSpec::Dense { .. } => 1,
                LayerSpec::Residual { .. } => 2,
                _ => 0,
            })
            .sum()
    }
}

/// Layer list of a residual network: a stride-1 stem convolution, optional
/// 2×2 max pooling, then stages of residual blocks whose first block halves
/// the resolution, each block followed by ReLU; the head is global average
/// pooling, dropout, `Dense(2)` and softmax.
pub fn residual_template(
    stem_channels: usize,
    stem_pool: bool,
    stages: &[(usize, usize)],
    dropout: f64,
) -> Vec<LayerSpec> {
    let mut layers = vec![
        LayerSpec::Conv2d {
            out_channels: stem_channels,
            stride: 1,
        },
        LayerSpec::Relu,
    ];
    if stem_pool {
        layers.push(LayerSpec::MaxPool);
    }
    for &(channels, blocks) in stages {
        for b in 0..blocks {
            layers.push(LayerSpec::Residual {
                out_channels: channels,
                stride: if b == 0 { 2 } else { 1 },
            });
            layers.push(LayerSpec::Relu);
        }
    }
    layers.extend([
        LayerSpec::GlobalAvgPool,
        LayerSpec::Dropout { rate: dropout },
        LayerSpec::Dense { units: 2 },
        LayerSpec::Softmax,
    ]);
    layers
}

/// Desk-scale default: 8-channel stem, three single-block stages.
pub fn toy_template() -> Vec<LayerSpec> {
    residual_template(8, false, &[(8, 1), (16, 1), (16, 1)], 0.5)
}

/// 50 weighted layers: stem, 24 two-convolution residual blocks, dense head.
pub fn fifty_layer_template() -> Vec<LayerSpec> {
    residual_template(64, true, &[(64, 4), (128, 6), (256, 10), (512, 4)], 0.5)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerParams {
    pub tensors: Vec<Tensor>,
    pub trainable: bool,
}

/// Learnable values of a model, one entry per layer (parameter-free layers
/// hold no tensors). Tensor order: convolution `[w, b]`; dense `[w, b]`;
/// residual `[w1, b1, w2, b2]` plus `[wp, bp]` when projecting.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub layers: Vec<LayerParams>,
}

/// Gradients share the parameter layout.
pub type Gradients = ModelParams;

fn he_normal(shape: &[usize], fan_in: usize, rng: &mut Rng) -> Tensor {
    let std = (2.0 / fan_in as f64).sqrt();
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| std * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng))
        .collect();
    Tensor::new(shape.to_vec(), data).expect("positive extents")
}

impl ModelParams {
    /// Fan-in scaled normal weights (`std = sqrt(2 / fan_in)`), zero biases,
    /// every layer trainable.
    pub fn init(spec: &ModelSpec, rng: &mut Rng) -> Result<Self> {
        Self::build(spec, |shape, fan_in| match fan_in {
            Some(f) => he_normal(shape, f, rng),
            None => Tensor::zeros(shape),
        })
    }

    pub fn zeros(spec: &ModelSpec) -> Result<Self> {
        Self::build(spec, |shape, _| Tensor::zeros(shape))
    }

    /// Calls `make(shape, Some(fan_in))` for weights and `make(shape, None)`
    /// for biases, in layer order.
    fn build(
        spec: &ModelSpec,
        mut make: impl FnMut(&[usize], Option<usize>) -> Tensor,
    ) -> Result<Self> {
        let shapes = spec.output_shapes()?;
        let mut input = spec.input_size.to_vec();
        let mut layers = Vec::with_capacity(spec.layers.len());
        for (layer, out) in spec.layers.iter().zip(shapes) {
            let k2 = KERNEL * KERNEL;
            let tensors = match *layer {
                LayerSpec::Conv2d { out_channels, .. } => {
                    let c = input[0];
                    vec![
                        make(&[out_channels, c, KERNEL, KERNEL], Some(c * k2)),
                        make(&[out_channels], None),
                    ]
                }
                LayerSpec::Residual {
                    out_channels,
                    stride,
                } => {
                    let c = input[0];
                    let mut t = vec![
                        make(&[out_channels, c, KERNEL, KERNEL], Some(c * k2)),
                        make(&[out_channels], None),
                        make(&[out_channels, out_channels, KERNEL, KERNEL], Some(out_channels * k2)),
                        make(&[out_channels], None),
                    ];
                    if needs_projection(c, out_channels, stride) {
                        t.push(make(&[out_channels, c, 1, 1], Some(c)));
                        t.push(make(&[out_channels], None));
                    }
                    t
                }
                LayerSpec::Dense { units } => {
                    let n: usize = input.iter().product();
                    vec![make(&[units, n], Some(n)), make(&[units], None)]
                }
                _ => Vec::new(),
            };
            layers.push(LayerParams {
                tensors,
                trainable: true,
            });
            input = out;
        }
        Ok(Self { layers })
    }

    /// Zero-valued copy with the same shapes and trainable flags.
    pub fn zeros_like(&self) -> Self {
        Self {
            layers: self
                .layers
                .iter()
                .map(|l| LayerParams {
                    tensors: l.tensors.iter().map(|t| Tensor::zeros(t.shape())).collect(),
                    trainable: l.trainable,
                })
                .collect(),
        }
    }

    pub fn set_trainable(&mut self, mut pick: impl FnMut(usize) -> bool) {
        for (i, l) in self.layers.iter_mut().enumerate() {
            l.trainable = pick(i);
        }
    }

    pub fn param_count(&self) -> usize {
        self.tensors().map(|t| t.len()).sum()
    }

    pub fn tensors(&self) -> impl Iterator<Item = &Tensor> {
        self.layers.iter().flat_map(|l| l.tensors.iter())
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Tensor> {
        self.layers.iter_mut().flat_map(|l| l.tensors.iter_mut())
    }

    pub fn same_layout(&self, other: &Self) -> bool {
        self.layers.len() == other.layers.len()
            && self.layers.iter().zip(&other.layers).all(|(a, b)| {
                a.tensors.len() == b.tensors.len()
                    && a.tensors.iter().zip(&b.tensors).all(|(x, y)| x.shape() == y.shape())
            })
    }

    pub fn check_matches(&self, spec: &ModelSpec) -> Result<()> {
        let expected = Self::zeros(spec)?;
        if !self.same_layout(&expected) {
            return Err(Error::InvalidArgument(
                "parameters do not match the model specification".into(),
            ));
        }
        Ok(())
    }

    fn add_scaled(&mut self, other: &Self, k: f64) {
        for (a, b) in self.tensors_mut().zip(other.tensors()) {
            for (x, y) in a.data_mut().iter_mut().zip(b.data()) {
                *x += k * y;
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    Train,
    Infer,
}

enum Cache {
    Conv {
        input_shape: Vec<usize>,
        cols: Vec<f64>,
    },
    MaxPool {
        input_shape: Vec<usize>,
        argmax: Vec<usize>,
    },
    Relu {
        input: Tensor,
    },
    Gap {
        input_shape: Vec<usize>,
    },
    Dense {
        input: Tensor,
    },
    Dropout {
        mask: Vec<f64>,
    },
    Residual {
        input_shape: Vec<usize>,
        cols1: Vec<f64>,
        pre: Tensor,
        cols2: Vec<f64>,
        proj_cols: Option<Vec<f64>>,
    },
    Softmax {
        probs: Vec<f64>,
    },
}

/// Everything the backward pass needs from one forward evaluation.
pub struct Trace {
    caches: Vec<Cache>,
    shapes: Vec<Vec<usize>>,
    pub probs: Vec<f64>,
}

impl Trace {
    /// Output shape realized by each layer.
    pub fn shapes(&self) -> &[Vec<usize>] {
        &self.shapes
    }
}

fn shape_err(layer: usize, e: Error) -> Error {
    match e {
        Error::Shape { .. } => e,
        other => Error::Shape {
            layer,
            message: other.to_string(),
        },
    }
}

/// Runs the network on one `C×H×W` input.
pub fn model_forward(
    spec: &ModelSpec,
    params: &ModelParams,
    input: &Tensor,
    mode: Mode,
    rng: &mut Rng,
) -> Result<(Vec<f64>, Trace)> {
    if input.shape() != spec.input_size {
        return Err(Error::Shape {
            layer: 0,
            message: format!(
                "input has shape {:?}, model expects {:?}",
                input.shape(),
                spec.input_size
            ),
        });
    }
    if params.layers.len() != spec.layers.len() {
        return Err(Error::InvalidArgument(format!(
            "{} parameter entries for {} layers",
            params.layers.len(),
            spec.layers.len()
        )));
    }
    let mut x = input.clone();
    let mut caches = Vec::with_capacity(spec.layers.len());
    let mut shapes = Vec::with_capacity(spec.layers.len());
    for (i, (layer, p)) in spec.layers.iter().zip(&params.layers).enumerate() {
        let t = &p.tensors;
        let (y, cache) = match *layer {
            LayerSpec::Conv2d { stride, .. } => {
                let (y, cols) = ops::conv2d_with_cols(&x, &t[0], t[1].data(), stride, PAD)
                    .map_err(|e| shape_err(i, e))?;
                let input_shape = x.shape().to_vec();
                (y, Cache::Conv { input_shape, cols })
            }
            LayerSpec::Residual { stride, .. } => {
                let (pre, cols1) = ops::conv2d_with_cols(&x, &t[0], t[1].data(), stride, PAD)
                    .map_err(|e| shape_err(i, e))?;
                let act = ops::relu(&pre);
                let (mut y, cols2) = ops::conv2d_with_cols(&act, &t[2], t[3].data(), 1, PAD)
                    .map_err(|e| shape_err(i, e))?;
                let proj_cols = if t.len() == 6 {
                    let (skip, cols) = ops::conv2d_with_cols(&x, &t[4], t[5].data(), stride, 0)
                        .map_err(|e| shape_err(i, e))?;
                    y.add_assign(&skip);
                    Some(cols)
                } else {
                    if y.shape() != x.shape() {
                        return Err(Error::Shape {
                            layer: i,
                            message: format!(
                                "residual skip {:?} does not match main path {:?}",
                                x.shape(),
                                y.shape()
                            ),
                        });
                    }
                    y.add_assign(&x);
                    None
                };
                let input_shape = x.shape().to_vec();
                (
                    y,
                    Cache::Residual {
                        input_shape,
                        cols1,
                        pre,
                        cols2,
                        proj_cols,
                    },
                )
            }
            LayerSpec::MaxPool => {
                let (y, argmax) = ops::maxpool2d(&x).map_err(|e| shape_err(i, e))?;
                let input_shape = x.shape().to_vec();
                (y, Cache::MaxPool { input_shape, argmax })
            }
            LayerSpec::Relu => (ops::relu(&x), Cache::Relu { input: x }),
            LayerSpec::GlobalAvgPool => {
                let y = ops::global_avg_pool(&x).map_err(|e| shape_err(i, e))?;
                let input_shape = x.shape().to_vec();
                (Tensor::from_vec(y), Cache::Gap { input_shape })
            }
            LayerSpec::Dense { .. } => {
                let y = ops::dense(x.data(), &t[0], t[1].data()).map_err(|e| shape_err(i, e))?;
                (Tensor::from_vec(y), Cache::Dense { input: x })
            }
            LayerSpec::Dropout { rate } => {
                let (y, mask) = ops::dropout(&x, rate, rng, mode == Mode::Train)
                    .map_err(|e| shape_err(i, e))?;
                (y, Cache::Dropout { mask })
            }
            LayerSpec::Softmax => {
                let probs = ops::softmax(x.data()).map_err(|e| shape_err(i, e))?;
                let y = Tensor::from_vec(probs.clone());
                (y, Cache::Softmax { probs })
            }
        };
        caches.push(cache);
        shapes.push(y.shape().to_vec());
        x = y;
    }
    let probs = x.into_data();
    Ok((
        probs.clone(),
        Trace {
            caches,
            shapes,
            probs,
        },
    ))
}

/// Accumulates `scale · ∂L/∂θ` into `grads`, given `∂L/∂output`. Layers
/// before the first trainable one are skipped entirely.
fn backward_into(
    spec: &ModelSpec,
    params: &ModelParams,
    trace: Trace,
    grad_output: Vec<f64>,
    grads: &mut Gradients,
    scale: f64,
) -> Result<()> {
    let Some(first) = params.layers.iter().position(|l| l.trainable) else {
        return Ok(());
    };
    let mut g = Tensor::from_vec(grad_output);
    let mut caches = trace.caches;
    for i in (first..spec.layers.len()).rev() {
        let cache = caches.pop().expect("one cache per layer");
        let want_input = i > first;
        let p = &params.layers[i];
        let gl = &mut grads.layers[i];
        let accumulate = |dst: &mut Tensor, src: &[f64]| {
            for (d, s) in dst.data_mut().iter_mut().zip(src) {
                *d += scale * s;
            }
        };
        g = match (&spec.layers[i], cache) {
            (LayerSpec::Conv2d { stride, .. }, Cache::Conv { input_shape, cols }) => {
                let cg = ops::conv2d_backward(
                    &input_shape,
                    &cols,
                    &p.tensors[0],
                    &g,
                    *stride,
                    PAD,
                    want_input,
                )?;
                if p.trainable {
                    accumulate(&mut gl.tensors[0], cg.weights.data());
                    accumulate(&mut gl.tensors[1], &cg.bias);
                }
                cg.input.unwrap_or_else(|| Tensor::zeros(&[1]))
            }
            (
                LayerSpec::Residual { stride, .. },
                Cache::Residual {
                    input_shape,
                    cols1,
                    pre,
                    cols2,
                    proj_cols,
                },
            ) => {
                let c2 = ops::conv2d_backward(
                    pre.shape(),
                    &cols2,
                    &p.tensors[2],
                    &g,
                    1,
                    PAD,
                    true,
                )?;
                let g_pre = ops::relu_backward(&pre, c2.input.as_ref().expect("requested"));
                let c1 = ops::conv2d_backward(
                    &input_shape,
                    &cols1,
                    &p.tensors[0],
                    &g_pre,
                    *stride,
                    PAD,
                    want_input,
                )?;
                if p.trainable {
                    accumulate(&mut gl.tensors[0], c1.weights.data());
                    accumulate(&mut gl.tensors[1], &c1.bias);
                    accumulate(&mut gl.tensors[2], c2.weights.data());
                    accumulate(&mut gl.tensors[3], &c2.bias);
                }
                let skip = match proj_cols {
                    Some(cols) => {
                        let cp = ops::conv2d_backward(
                            &input_shape,
                            &cols,
                            &p.tensors[4],
                            &g,
                            *stride,
                            0,
                            want_input,
                        )?;
                        if p.trainable {
                            accumulate(&mut gl.tensors[4], cp.weights.data());
                            accumulate(&mut gl.tensors[5], &cp.bias);
                        }
                        cp.input
                    }
                    None => Some(g),
                };
                match (c1.input, skip) {
                    (Some(mut a), Some(b)) if want_input => {
                        a.add_assign(&b);
                        a
                    }
                    _ => Tensor::zeros(&[1]),
                }
            }
            (LayerSpec::MaxPool, Cache::MaxPool { input_shape, argmax }) => {
                ops::maxpool2d_backward(&input_shape, &argmax, &g)
            }
            (LayerSpec::Relu, Cache::Relu { input }) => ops::relu_backward(&input, &g),
            (LayerSpec::GlobalAvgPool, Cache::Gap { input_shape }) => {
                ops::global_avg_pool_backward(&input_shape, g.data())
            }
            (LayerSpec::Dense { .. }, Cache::Dense { input }) => {
                let dg = ops::dense_backward(input.data(), &p.tensors[0], g.data());
                if p.trainable {
                    accumulate(&mut gl.tensors[0], dg.weights.data());
                    accumulate(&mut gl.tensors[1], &dg.bias);
                }
                Tensor::new(input.shape().to_vec(), dg.input)?
            }
            (LayerSpec::Dropout { .. }, Cache::Dropout { mask }) => {
                ops::dropout_backward(&mask, &g)
            }
            (LayerSpec::Softmax, Cache::Softmax { probs }) => {
                Tensor::from_vec(ops::softmax_backward(&probs, g.data()))
            }
            _ => unreachable!("cache kind follows layer kind"),
        };
    }
    Ok(())
}

/// Gradient of the clamped cross-entropy with respect to the probabilities.
fn cross_entropy_grad(probs: &[f64], label: u8) -> Vec<f64> {
    let mut g = vec![0.0; probs.len()];
    let p = probs[label as usize];
    if p > crate::train::PROB_FLOOR {
        g[label as usize] = -1.0 / p;
    }
    g
}

/// Mean cross-entropy over `batch` and its exact gradient with respect to
/// every trainable parameter. Frozen layers get zero gradient.
pub fn model_backward(
    spec: &ModelSpec,
    params: &ModelParams,
    batch: &[(Tensor, u8)],
    mode: Mode,
    rng: &mut Rng,
) -> Result<(f64, Gradients)> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    let mut grads = params.zeros_like();
    let scale = 1.0 / batch.len() as f64;
    let mut loss = 0.0;
    for (input, label) in batch {
        if *label > 1 {
            return Err(Error::InvalidArgument(format!("label {label} not in {{0, 1}}")));
        }
        let (probs, trace) = model_forward(spec, params, input, mode, rng)?;
        loss += cross_entropy(&probs, *label)?;
        let g = cross_entropy_grad(&probs, *label);
        backward_into(spec, params, trace, g, &mut grads, scale)?;
    }
    Ok((loss * scale, grads))
}

/// Sums `grads` into `acc` (used to reduce per-batch gradients in a fixed
/// order).
pub fn accumulate(acc: &mut Gradients, grads: &Gradients, weight: f64) {
    acc.add_scaled(grads, weight);
}
