//! Trains one small residual network on synthetic images with RMSprop and
//! early stopping, then scores the held-out test split.
//!
//!     cargo run --example train_single_model

use cxr_ensemble::augment::AugmentConfig;
use cxr_ensemble::imageio::{split_dataset, ManifestEntry};
use cxr_ensemble::metrics::{auc_of, ScoredSample};
use cxr_ensemble::nn::{model_forward, toy_template, Mode, ModelParams, ModelSpec};
use cxr_ensemble::rng;
use cxr_ensemble::synth::{self, SynthConfig};
use cxr_ensemble::train::{fit_with, prepare_input, Sample, TrainConfig};

fn main() -> cxr_ensemble::Result<()> {
    let cfg = SynthConfig {
        n_negative: 100,
        n_positive: 100,
        image_size: 48,
        blob_radius_range: [3.0, 8.0],
        blob_contrast: 0.3,
        ..Default::default()
    };
    let data = synth::generate(&cfg, 2)?;
    let entries: Vec<ManifestEntry> = data
        .labels
        .iter()
        .enumerate()
        .map(|(i, &l)| ManifestEntry::new(i.to_string(), l))
        .collect();
    let split = split_dataset(&entries, 2)?;
    let subset = |part: &[ManifestEntry]| -> Vec<Sample> {
        part.iter()
            .map(|e| {
                let i: usize = e.path.to_str().unwrap().parse().unwrap();
                Sample { image: data.images[i].clone(), label: data.labels[i] }
            })
            .collect()
    };
    let (train, val, test) = (subset(&split.train), subset(&split.validation), subset(&split.test));

    let spec = ModelSpec::new([1, 32, 32], toy_template())?;
    let tc = TrainConfig {
        lr0: 3e-3,
        max_epochs: 15,
        patience: 5,
        phase1_epochs: 1,
        ..Default::default()
    };
    let mut r = rng::seeded(3);
    let init = ModelParams::init(&spec, &mut r)?;
    println!("{} parameters, {} training images", init.param_count(), train.len());
    let (params, history) = fit_with(&spec, init, &train, &val, &tc, &AugmentConfig::default(), &mut r, |ev| {
        let rec = ev.record;
        println!(
            "epoch {:2} phase {} train_loss {:.4} val_loss {:.4}",
            rec.epoch, rec.phase, rec.train_loss, rec.val_loss
        );
    })?;
    println!("best epoch {}, stopped early: {}", history.best_epoch, history.stopped_early);

    let scores = test
        .iter()
        .map(|s| {
            let x = prepare_input(&spec, &s.image)?;
            let (probs, _) = model_forward(&spec, &params, &x, Mode::Infer, &mut r)?;
            Ok(ScoredSample::new(probs[1], s.label))
        })
        .collect::<cxr_ensemble::Result<Vec<_>>>()?;
    println!("test AUC {:.4}", auc_of(&scores)?);
    Ok(())
}
