//! Test-only oracles: central finite differences for every layer kind and
//! for whole models, plus brute-force ROC statistics. These deliberately
//! avoid the crate's backward passes and ROC construction.

#![allow(dead_code)]

use cxr_ensemble::metrics::ScoredSample;
use cxr_ensemble::nn::ops;
use cxr_ensemble::nn::{model_backward, LayerSpec, Mode, ModelParams, ModelSpec, Tensor};
use cxr_ensemble::rng::{self, Rng};

pub const FD_STEP: f64 = 1e-5;
pub const FD_REL_TOL: f64 = 1e-4;
/// Below this magnitude the relative error is measured against the floor.
pub const FD_FLOOR: f64 = 1e-7;
/// Rounding noise of a central difference at `FD_STEP / 100` on an O(1) loss.
const KINK_NOISE: f64 = 1e-8;

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(FD_FLOOR)
}

/// Central differences of `f` at `x`. Where the estimate at `FD_STEP`
/// disagrees with one at a hundredth of the step by more than the narrow
/// probe's rounding noise, the wider probe straddles a ReLU or pooling kink
/// and the narrower one is kept.
pub fn central_diff(mut f: impl FnMut(&[f64]) -> f64, x: &[f64]) -> Vec<f64> {
    let mut probe = x.to_vec();
    let mut at = |i: usize, h: f64, probe: &mut Vec<f64>| {
        probe[i] = x[i] + h;
        let up = f(probe);
        probe[i] = x[i] - h;
        let down = f(probe);
        probe[i] = x[i];
        (up - down) / (2.0 * h)
    };
    (0..x.len())
        .map(|i| {
            let wide = at(i, FD_STEP, &mut probe);
            let narrow = at(i, FD_STEP / 100.0, &mut probe);
            if (wide - narrow).abs() > (FD_REL_TOL * narrow.abs()).max(KINK_NOISE) {
                narrow
            } else {
                wide
            }
        })
        .collect()
}

pub fn max_rel(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| rel_err(a, n))
        .fold(0.0, f64::max)
}

pub fn uniform_vec(n: usize, rng: &mut Rng) -> Vec<f64> {
    (0..n).map(|_| rng::uniform(rng, -1.0, 1.0)).collect()
}

/// Values bounded away from zero so ReLU kinks and pooling ties are not hit.
fn away_from_zero(n: usize, rng: &mut Rng) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let v = rng::uniform(rng, 0.05, 1.0);
            if rng::unit(rng) < 0.5 {
                -v
            } else {
                v
            }
        })
        .collect()
}

fn tensor(shape: &[usize], data: &[f64]) -> Tensor {
    Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Max relative error of each layer kind's backward pass against finite
/// differences of the scalar `Σ r · layer(x)` for a random direction `r`.
pub fn layer_checks(seed: u64) -> Vec<(String, f64)> {
    let mut rng = rng::seeded(seed);
    let mut out = Vec::new();

    for (stride, pad) in [(1, 1), (2, 1), (1, 0), (2, 0)] {
        let (c, h, w, o, k) = (2, 5, 6, 3, 3);
        let x = uniform_vec(c * h * w, &mut rng);
        let wt = uniform_vec(o * c * k * k, &mut rng);
        let b = uniform_vec(o, &mut rng);
        let oh = ops::conv_output_len(h, k, stride, pad).unwrap();
        let ow = ops::conv_output_len(w, k, stride, pad).unwrap();
        let r = uniform_vec(o * oh * ow, &mut rng);

        let (nx, nw) = (x.len(), wt.len());
        let theta: Vec<f64> = x.iter().chain(&wt).chain(&b).cloned().collect();
        let loss = |t: &[f64]| {
            let y = ops::conv2d(
                &tensor(&[c, h, w], &t[..nx]),
                &tensor(&[o, c, k, k], &t[nx..nx + nw]),
                &t[nx + nw..],
                stride,
                pad,
            )
            .unwrap();
            dot(y.data(), &r)
        };
        let numeric = central_diff(loss, &theta);
        let input = tensor(&[c, h, w], &x);
        let weights = tensor(&[o, c, k, k], &wt);
        let (_, cols) = ops::conv2d_with_cols(&input, &weights, &b, stride, pad).unwrap();
        let g = ops::conv2d_backward(
            input.shape(),
            &cols,
            &weights,
            &tensor(&[o, oh, ow], &r),
            stride,
            pad,
            true,
        )
        .unwrap();
        let analytic: Vec<f64> = g
            .input
            .unwrap()
            .data()
            .iter()
            .chain(g.weights.data())
            .chain(&g.bias)
            .cloned()
            .collect();
        out.push((
            format!("conv2d stride {stride} pad {pad}"),
            max_rel(&analytic, &numeric),
        ));
    }

    {
        let x = away_from_zero(2 * 4 * 6, &mut rng);
        let r = uniform_vec(2 * 2 * 3, &mut rng);
        let loss = |t: &[f64]| dot(ops::maxpool2d(&tensor(&[2, 4, 6], t)).unwrap().0.data(), &r);
        let numeric = central_diff(loss, &x);
        let (_, arg) = ops::maxpool2d(&tensor(&[2, 4, 6], &x)).unwrap();
        let g = ops::maxpool2d_backward(&[2, 4, 6], &arg, &tensor(&[2, 2, 3], &r));
        out.push(("maxpool".into(), max_rel(g.data(), &numeric)));
    }

    {
        let x = away_from_zero(30, &mut rng);
        let r = uniform_vec(30, &mut rng);
        let loss = |t: &[f64]| dot(ops::relu(&Tensor::from_vec(t.to_vec())).data(), &r);
        let numeric = central_diff(loss, &x);
        let g = ops::relu_backward(&Tensor::from_vec(x.clone()), &Tensor::from_vec(r.clone()));
        out.push(("relu".into(), max_rel(g.data(), &numeric)));
    }

    {
        let x = uniform_vec(3 * 4 * 5, &mut rng);
        let r = uniform_vec(3, &mut rng);
        let loss = |t: &[f64]| dot(&ops::global_avg_pool(&tensor(&[3, 4, 5], t)).unwrap(), &r);
        let numeric = central_diff(loss, &x);
        let g = ops::global_avg_pool_backward(&[3, 4, 5], &r);
        out.push(("global_avg_pool".into(), max_rel(g.data(), &numeric)));
    }

    {
        let (units, n) = (2, 5);
        let x = uniform_vec(n, &mut rng);
        let wt = uniform_vec(units * n, &mut rng);
        let b = uniform_vec(units, &mut rng);
        let r = uniform_vec(units, &mut rng);
        let theta: Vec<f64> = x.iter().chain(&wt).chain(&b).cloned().collect();
        let loss = |t: &[f64]| {
            let y = ops::dense(&t[..n], &tensor(&[units, n], &t[n..n + units * n]), &t[n + units * n..])
                .unwrap();
            dot(&y, &r)
        };
        let numeric = central_diff(loss, &theta);
        let g = ops::dense_backward(&x, &tensor(&[units, n], &wt), &r);
        let analytic: Vec<f64> = g
            .input
            .iter()
            .chain(g.weights.data())
            .chain(&g.bias)
            .cloned()
            .collect();
        out.push(("dense".into(), max_rel(&analytic, &numeric)));
    }

    {
        let x = uniform_vec(40, &mut rng);
        let r = uniform_vec(40, &mut rng);
        let mask_seed = rng.clone();
        let loss = |t: &[f64]| {
            let mut m = mask_seed.clone();
            let (y, _) = ops::dropout(&Tensor::from_vec(t.to_vec()), 0.5, &mut m, true).unwrap();
            dot(y.data(), &r)
        };
        let numeric = central_diff(loss, &x);
        let mut m = mask_seed.clone();
        let (_, mask) = ops::dropout(&Tensor::from_vec(x.clone()), 0.5, &mut m, true).unwrap();
        let g = ops::dropout_backward(&mask, &Tensor::from_vec(r.clone()));
        out.push(("dropout".into(), max_rel(g.data(), &numeric)));
    }

    {
        let v: Vec<f64> = uniform_vec(4, &mut rng).iter().map(|x| 3.0 * x).collect();
        let r = uniform_vec(4, &mut rng);
        let loss = |t: &[f64]| dot(&ops::softmax(t).unwrap(), &r);
        let numeric = central_diff(loss, &v);
        let p = ops::softmax(&v).unwrap();
        out.push(("softmax".into(), max_rel(&ops::softmax_backward(&p, &r), &numeric)));
    }

    for (name, layers, input) in [
        (
            "residual identity skip",
            vec![LayerSpec::Residual {
                out_channels: 2,
                stride: 1,
            }],
            [2, 6, 6],
        ),
        (
            "residual projection skip",
            vec![LayerSpec::Residual {
                out_channels: 3,
                stride: 2,
            }],
            [2, 6, 6],
        ),
    ] {
        let mut all = layers;
        all.extend([
            LayerSpec::GlobalAvgPool,
            LayerSpec::Dense { units: 2 },
            LayerSpec::Softmax,
        ]);
        let spec = ModelSpec::new(input, all).unwrap();
        out.push((name.into(), model_check(&spec, Mode::Infer, 2, &mut rng)));
    }
    out
}

fn flatten(p: &ModelParams) -> Vec<f64> {
    p.tensors().flat_map(|t| t.data().iter().cloned()).collect()
}

fn unflatten(template: &ModelParams, flat: &[f64]) -> ModelParams {
    let mut p = template.clone();
    let mut off = 0;
    for t in p.tensors_mut() {
        let n = t.len();
        t.data_mut().copy_from_slice(&flat[off..off + n]);
        off += n;
    }
    p
}

/// Max relative error of `model_backward` against finite differences of its
/// mean loss, for random weights and a random batch. Every evaluation uses
/// the same generator state, so dropout masks are fixed.
pub fn model_check(spec: &ModelSpec, mode: Mode, batch_len: usize, rng: &mut Rng) -> f64 {
    let init = ModelParams::init(spec, rng).unwrap();
    // zero-initialized biases put ReLUs exactly on their kink where the
    // incoming activations vanish, so move every weight off that point
    let jittered: Vec<f64> = flatten(&init)
        .into_iter()
        .map(|w| w + rng::uniform(rng, -0.05, 0.05))
        .collect();
    let params = unflatten(&init, &jittered);
    let n: usize = spec.input_size.iter().product();
    let batch: Vec<(Tensor, u8)> = (0..batch_len)
        .map(|i| {
            (
                Tensor::new(spec.input_size.to_vec(), uniform_vec(n, rng)).unwrap(),
                (i % 2) as u8,
            )
        })
        .collect();
    let fixed = rng.clone();
    let loss = |flat: &[f64]| {
        let p = unflatten(&params, flat);
        model_backward(spec, &p, &batch, mode, &mut fixed.clone()).unwrap().0
    };
    let theta = flatten(&params);
    let numeric = central_diff(loss, &theta);
    let (_, grads) = model_backward(spec, &params, &batch, mode, &mut fixed.clone()).unwrap();
    max_rel(&flatten(&grads), &numeric)
}

/// The tiny end-to-end model: two stem channels, residual blocks with and
/// without projection, max pooling and dropout, on an 8×8 input.
pub fn tiny_model() -> ModelSpec {
    ModelSpec::new(
        [1, 8, 8],
        vec![
            LayerSpec::Conv2d {
                out_channels: 2,
                stride: 1,
            },
            LayerSpec::Relu,
            LayerSpec::Residual {
                out_channels: 2,
                stride: 1,
            },
            LayerSpec::Relu,
            LayerSpec::MaxPool,
            LayerSpec::Residual {
                out_channels: 3,
                stride: 2,
            },
            LayerSpec::Relu,
            LayerSpec::GlobalAvgPool,
            LayerSpec::Dropout { rate: 0.5 },
            LayerSpec::Dense { units: 2 },
            LayerSpec::Softmax,
        ],
    )
    .unwrap()
}

/// Probability that a random positive outscores a random negative, ties ½,
/// by enumerating every pair.
pub fn pairwise_auc(samples: &[ScoredSample]) -> f64 {
    let pos: Vec<f64> = samples.iter().filter(|s| s.label == 1).map(|s| s.score).collect();
    let neg: Vec<f64> = samples.iter().filter(|s| s.label == 0).map(|s| s.score).collect();
    let mut wins = 0.0;
    for &p in &pos {
        for &n in &neg {
            if p > n {
                wins += 1.0;
            } else if p == n {
                wins += 0.5;
            }
        }
    }
    wins / (pos.len() * neg.len()) as f64
}

/// `(TN·P + TP·N, N·P)`: `Sp + Se` as an exact fraction (times 100).
pub fn sp_plus_se_exact(samples: &[ScoredSample], threshold: f64) -> (u64, u64) {
    let (mut tp, mut tn, mut p, mut n) = (0u64, 0u64, 0u64, 0u64);
    for s in samples {
        let predicted = s.score >= threshold;
        if s.label == 1 {
            p += 1;
            tp += predicted as u64;
        } else {
            n += 1;
            tn += !predicted as u64;
        }
    }
    (tn * p + tp * n, n * p)
}

/// Every threshold that can change a decision: each distinct score and one
/// value above them all.
pub fn sweep_thresholds(samples: &[ScoredSample]) -> Vec<f64> {
    let mut t: Vec<f64> = samples.iter().map(|s| s.score).collect();
    t.sort_by(f64::total_cmp);
    t.dedup();
    t.push(t.last().unwrap() + 1.0);
    t
}

/// Random scores for `n` samples with at least one of each class. With
/// `ties`, scores are drawn from a coarse grid.
pub fn random_scored(rng: &mut Rng, n: usize, ties: bool) -> Vec<ScoredSample> {
    loop {
        let s: Vec<ScoredSample> = (0..n)
            .map(|_| {
                let label = (rng::unit(rng) < 0.4) as u8;
                let raw = rng::unit(rng) * 0.7 + 0.3 * label as f64 * rng::unit(rng);
                let score = if ties { (raw * 10.0).floor() / 10.0 } else { raw };
                ScoredSample::new(score, label)
            })
            .collect();
        if s.iter().any(|x| x.label == 1) && s.iter().any(|x| x.label == 0) {
            return s;
        }
    }
}
