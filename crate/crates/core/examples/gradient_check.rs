//! Compares the analytic gradient of a small residual network with central
//! finite differences of its loss.
//!
//!     cargo run --example gradient_check

use cxr_ensemble::nn::{model_backward, LayerSpec, Mode, ModelParams, ModelSpec, Tensor};
use cxr_ensemble::rng;

fn flatten(p: &ModelParams) -> Vec<f64> {
    p.tensors().flat_map(|t| t.data().iter().copied()).collect()
}

fn main() -> cxr_ensemble::Result<()> {
    let spec = ModelSpec::new(
        [1, 8, 8],
        vec![
            LayerSpec::Conv2d { out_channels: 2, stride: 1 },
            LayerSpec::Relu,
            LayerSpec::Residual { out_channels: 2, stride: 1 },
            LayerSpec::Relu,
            LayerSpec::GlobalAvgPool,
            LayerSpec::Dense { units: 2 },
            LayerSpec::Softmax,
        ],
    )?;
    let mut r = rng::seeded(3);
    let params = ModelParams::init(&spec, &mut r)?;
    let batch: Vec<(Tensor, u8)> = (0..2)
        .map(|i| {
            let x = (0..64).map(|_| rng::uniform(&mut r, -1.0, 1.0)).collect();
            (Tensor::new(vec![1, 8, 8], x).unwrap(), i as u8)
        })
        .collect();

    let (loss, grads) = model_backward(&spec, &params, &batch, Mode::Infer, &mut r)?;
    let analytic = flatten(&grads);
    println!("loss {loss:.6}, {} parameters", analytic.len());

    let h = 1e-5;
    let mut worst = 0.0f64;
    let mut probe = params.clone();
    let mut index = 0;
    for t in 0..probe.tensors().count() {
        let len = probe.tensors().nth(t).unwrap().len();
        for j in 0..len {
            let at = |p: &mut ModelParams, v: f64, r: &mut rng::Rng| {
                p.tensors_mut().nth(t).unwrap().data_mut()[j] = v;
                model_backward(&spec, p, &batch, Mode::Infer, r).unwrap().0
            };
            let x = params.tensors().nth(t).unwrap().data()[j];
            let numeric = (at(&mut probe, x + h, &mut r) - at(&mut probe, x - h, &mut r)) / (2.0 * h);
            at(&mut probe, x, &mut r);
            let a = analytic[index];
            worst = worst.max((a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-7));
            index += 1;
        }
    }
    println!("max relative error {worst:.2e}");
    Ok(())
}
