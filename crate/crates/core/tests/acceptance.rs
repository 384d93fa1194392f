//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each and
//! exits non-zero if any failed.

mod common;

use std::collections::BTreeMap;
use std::fs;
use std::panic::{self, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use common::{
    layer_checks, model_check, pairwise_auc, random_scored, sp_plus_se_exact, sweep_thresholds,
    tiny_model, FD_REL_TOL,
};
use cxr_ensemble::augment::{self, AugmentConfig};
use cxr_ensemble::ensemble::{score_samples, train_ensemble};
use cxr_ensemble::imageio::{split_dataset, GrayImage, ManifestEntry};
use cxr_ensemble::metrics::{
    auc_of, choose_cutoff, confusion_at, fixed, interpret, report, roc_curve, sp_se_acc,
    ResultRow, ScoredSample,
};
use cxr_ensemble::nn::{Mode, ModelParams, ModelSpec};
use cxr_ensemble::pipeline::{self, Paths, PipelineConfig};
use cxr_ensemble::rng;
use cxr_ensemble::synth;
use cxr_ensemble::train::{best_epoch, early_stop, fit_with, Sample, StopDecision, TrainConfig};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(elapsed: Duration, limit_secs: u64) -> Result<(), String> {
    ensure(elapsed.as_secs_f64() < limit_secs as f64, || {
        format!("took {:.1}s, limit {limit_secs}s", elapsed.as_secs_f64())
    })
}

fn gradients() -> Outcome {
    let started = Instant::now();
    let mut worst = 0.0f64;
    let seeds = 20;
    let spec = tiny_model();
    for seed in 0..seeds {
        for (name, err) in layer_checks(seed) {
            ensure(err < FD_REL_TOL, || format!("seed {seed} {name}: {err:e}"))?;
            worst = worst.max(err);
        }
        let mut r = rng::seeded(1000 + seed);
        for (mode, batch) in [(Mode::Train, 3), (Mode::Infer, 2)] {
            let err = model_check(&spec, mode, batch, &mut r);
            ensure(err < FD_REL_TOL, || format!("seed {seed} tiny model {mode:?}: {err:e}"))?;
            worst = worst.max(err);
        }
    }
    within(started.elapsed(), 60)?;
    Ok(format!(
        "{seeds} seeds, every layer kind + tiny model, worst relative error {worst:.2e}, {:.1}s",
        started.elapsed().as_secs_f64()
    ))
}

fn auc_oracle() -> Outcome {
    let started = Instant::now();
    let mut r = rng::seeded(2);
    let mut worst = 0.0f64;
    for i in 0..1000 {
        let n = 2 + rng::below(&mut r, 999);
        let s = random_scored(&mut r, n, i % 2 == 0);
        let d = (auc_of(&s).map_err(|e| e.to_string())? - pairwise_auc(&s)).abs();
        ensure(d <= 1e-12, || format!("set {i} (n = {n}): difference {d:e}"))?;
        worst = worst.max(d);
    }
    within(started.elapsed(), 60)?;
    Ok(format!(
        "1000 score sets (n ≤ 1000, half with ties), max |trapezoid − pairwise| {worst:.1e}, {:.1}s",
        started.elapsed().as_secs_f64()
    ))
}

fn results_table() -> Outcome {
    let rows = [
        ("Ensemble", 0.911, 84.02, 85.51, "84.77"),
        ("Model 512", 0.897, 84.21, 82.58, "83.40"),
        ("Model 384", 0.888, 83.72, 81.32, "82.52"),
        ("Model 256", 0.898, 83.66, 83.07, "83.37"),
    ];
    let input: Vec<ResultRow> = rows
        .iter()
        .map(|&(m, auc, sp, se, _)| ResultRow::new(m, auc, sp, se))
        .collect();
    let rep = report(&input).map_err(|e| e.to_string())?;
    for (row, &(m, .., acc)) in rep.rows.iter().zip(&rows) {
        let got = fixed(row.acc, 2);
        ensure(got == acc, || format!("{m}: Acc {got}, expected {acc}"))?;
    }
    let band = |a: f64| interpret(a).map(|b| b.to_string()).map_err(|e| e.to_string());
    ensure(band(0.911)? == "Excellent discrimination", || "0.911".into())?;
    for a in [0.806, 0.841, 0.888] {
        ensure(band(a)? == "Good discrimination", || format!("{a}: {:?}", band(a)))?;
    }
    Ok("Acc 84.77 / 83.40 / 82.52 / 83.37; 0.911 excellent; 0.806 / 0.841 / 0.888 good".into())
}

fn cutoff_rule() -> Outcome {
    let mut r = rng::seeded(4);
    for i in 0..200 {
        let n = 2 + rng::below(&mut r, 300);
        let s: Vec<ScoredSample> = random_scored(&mut r, n, i % 2 == 1);
        let curve = roc_curve(&s).map_err(|e| e.to_string())?;
        let cut = choose_cutoff(&curve, &s).map_err(|e| e.to_string())?;

        let (chosen, _) = sp_plus_se_exact(&s, cut.threshold);
        let best = sweep_thresholds(&s)
            .into_iter()
            .map(|t| sp_plus_se_exact(&s, t).0)
            .max()
            .unwrap();
        ensure(chosen == best, || format!("set {i}: Sp+Se not maximal"))?;

        let acc = |t: f64| sp_se_acc(&confusion_at(&s, t).unwrap()).unwrap().acc;
        let best_acc = sweep_thresholds(&s).into_iter().map(acc).fold(f64::MIN, f64::max);
        let tol = 1e-9;
        ensure(acc(cut.threshold) >= best_acc - tol, || {
            format!("set {i}: accuracy {} below maximum {best_acc}", acc(cut.threshold))
        })?;
    }
    Ok("200 score sets: chosen cut-off attains max Sp+Se (exact) and max accuracy".into())
}

fn to_samples(data: &synth::SynthDataset, entries: &[ManifestEntry]) -> Vec<Sample> {
    entries
        .iter()
        .map(|e| {
            let i: usize = e.path.to_str().unwrap().parse().unwrap();
            Sample {
                image: data.images[i].clone(),
                label: data.labels[i],
            }
        })
        .collect()
}

fn ensemble_analogue() -> Outcome {
    let started = Instant::now();
    let mut wins = 0;
    let mut lines = Vec::new();
    let mut branch_failures = Vec::new();
    for seed in 1..=5u64 {
        let cfg = PipelineConfig {
            seed,
            ..PipelineConfig::toy()
        };
        let data = synth::generate(&cfg.synth, cfg.synth_seed()).map_err(|e| e.to_string())?;
        let entries: Vec<ManifestEntry> = data
            .labels
            .iter()
            .enumerate()
            .map(|(i, &l)| ManifestEntry::new(i.to_string(), l))
            .collect();
        let split = split_dataset(&entries, cfg.split_seed()).map_err(|e| e.to_string())?;
        ensure(
            (split.train.len(), split.validation.len(), split.test.len()) == (400, 100, 125),
            || "split is not 400/100/125".into(),
        )?;
        let (train, val, test) = (
            to_samples(&data, &split.train),
            to_samples(&data, &split.validation),
            to_samples(&data, &split.test),
        );
        let model = train_ensemble(
            &train,
            &val,
            &cfg.ensemble.spec(),
            &cfg.train,
            &cfg.augment,
            cfg.train_seed(),
            false,
            |_, _| {},
        )
        .map_err(|e| e.to_string())?;
        let table = score_samples(&model, &test).map_err(|e| e.to_string())?;
        let branch_aucs = table
            .branch
            .iter()
            .map(|s| auc_of(&cxr_ensemble::metrics::scored(s, &table.labels)))
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| e.to_string())?;
        let ens = auc_of(&cxr_ensemble::metrics::scored(&table.ensemble, &table.labels))
            .map_err(|e| e.to_string())?;
        let mean = branch_aucs.iter().sum::<f64>() / branch_aucs.len() as f64;
        if ens >= mean {
            wins += 1;
        }
        for (b, &a) in branch_aucs.iter().enumerate() {
            if a < 0.85 {
                branch_failures.push(format!("seed {seed} branch {b}: {a:.4}"));
            }
        }
        let aucs: Vec<String> = branch_aucs.iter().map(|a| format!("{a:.4}")).collect();
        lines.push(format!(
            "      seed {seed}: branches [{}] mean {mean:.4}, ensemble {ens:.4}",
            aucs.join(", ")
        ));
    }
    let elapsed = started.elapsed();
    let detail = format!(
        "ensemble ≥ branch mean in {wins}/5 runs, {:.0}s\n{}",
        elapsed.as_secs_f64(),
        lines.join("\n")
    );
    ensure(wins >= 4, || detail.clone())?;
    ensure(branch_failures.is_empty(), || {
        format!("{detail}\n      branch AUC < 0.85: {}", branch_failures.join("; "))
    })?;
    within(elapsed, 15 * 60).map_err(|e| format!("{e}\n{detail}"))?;
    Ok(detail)
}

fn early_stopping() -> Outcome {
    let losses = [1.0, 0.9, 0.95, 0.96, 0.97];
    ensure(
        early_stop(&losses[..4], 3) == StopDecision::Continue
            && early_stop(&losses, 3) == StopDecision::Stop
            && best_epoch(&losses) == Some(2),
        || "[1.0, 0.9, 0.95, 0.96, 0.97] example".into(),
    )?;
    let flat = [0.5; 4];
    ensure(
        early_stop(&flat[..3], 3) == StopDecision::Continue
            && early_stop(&flat, 3) == StopDecision::Stop
            && best_epoch(&flat) == Some(1),
        || "[0.5; 4] example".into(),
    )?;
    let falling: Vec<f64> = (1..=40).map(|i| 1.0 / i as f64).collect();
    ensure(
        (1..=falling.len()).all(|k| early_stop(&falling[..k], 3) == StopDecision::Continue),
        || "decreasing losses stopped".into(),
    )?;

    // forced overfit: a large step on eight images
    let cfg = synth::SynthConfig {
        n_negative: 4,
        n_positive: 4,
        image_size: 16,
        blob_radius_range: [3.0, 5.0],
        blob_contrast: 0.3,
        ..Default::default()
    };
    let as_samples = |seed| {
        let d = synth::generate(&cfg, seed).unwrap();
        d.images
            .into_iter()
            .zip(d.labels)
            .map(|(image, label)| Sample { image, label })
            .collect::<Vec<_>>()
    };
    let (train, val) = (as_samples(3), as_samples(4));
    let tc = TrainConfig {
        lr0: 3e-2,
        max_epochs: 20,
        patience: 1,
        phase1_epochs: 0,
        ..Default::default()
    };
    let spec = ModelSpec::new([1, 16, 16], cxr_ensemble::nn::toy_template()).unwrap();
    let mut r = rng::seeded(5);
    let init = ModelParams::init(&spec, &mut r).unwrap();
    let mut snapshots = Vec::new();
    let (params, history) = fit_with(
        &spec,
        init,
        &train,
        &val,
        &tc,
        &AugmentConfig::identity(),
        &mut r,
        |ev| snapshots.push(ev.params.clone()),
    )
    .map_err(|e| e.to_string())?;
    ensure(history.stopped_early, || "forced-overfit run did not stop early".into())?;
    let best = &snapshots[history.best_epoch - 1];
    let bitwise = params.tensors().zip(best.tensors()).all(|(a, b)| {
        a.shape() == b.shape()
            && a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits())
    });
    ensure(bitwise, || "restored weights differ from best-epoch snapshot".into())?;
    Ok(format!(
        "History examples exact; forced overfit stopped at epoch {}, restored epoch {} bitwise",
        history.epochs.len(),
        history.best_epoch
    ))
}

fn augmentation_bounds() -> Outcome {
    let cfg = AugmentConfig::default();
    let mut r = rng::seeded(7);
    let mut img_rng = rng::seeded(8);
    let pixels = (0..7 * 5)
        .map(|_| rng::below(&mut img_rng, 256) as u16)
        .collect();
    let img = GrayImage::new(7, 5, 255, pixels).unwrap();
    let (mut lo, mut hi) = (f64::MAX, f64::MIN);
    let mut max_crop = 0.0f64;
    for i in 0..100_000 {
        let p = augment::sample_params(&mut r, &cfg).map_err(|e| e.to_string())?;
        ensure((0.875..=1.125).contains(&p.scale), || format!("draw {i}: scale {}", p.scale))?;
        ensure(p.crop_dx.abs() <= 0.125 && p.crop_dy.abs() <= 0.125, || {
            format!("draw {i}: crop ({}, {})", p.crop_dx, p.crop_dy)
        })?;
        let out = augment::apply(&img, &p);
        ensure(
            out.max_value() == 255 && out.pixels().iter().all(|&v| v <= 255),
            || format!("draw {i}: pixel out of range"),
        )?;
        lo = lo.min(p.scale);
        hi = hi.max(p.scale);
        max_crop = max_crop.max(p.crop_dx.abs()).max(p.crop_dy.abs());
    }
    Ok(format!(
        "10^5 draws: scale in [{lo:.4}, {hi:.4}], max |crop| {max_crop:.4}, all pixels in range"
    ))
}

fn files_under(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn determinism() -> Outcome {
    let base = PipelineConfig {
        seed: 17,
        synth: synth::SynthConfig {
            n_negative: 30,
            n_positive: 30,
            image_size: 48,
            ..Default::default()
        },
        train: TrainConfig {
            lr0: 3e-3,
            max_epochs: 3,
            phase1_epochs: 1,
            ..Default::default()
        },
        ensemble: pipeline::EnsembleConfig {
            branch_sizes: vec![24, 16, 8],
            ..pipeline::EnsembleConfig::toy()
        },
        ..PipelineConfig::default()
    };
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    let runs: Vec<_> = dirs
        .iter()
        .map(|d| {
            let cfg = PipelineConfig {
                paths: Paths::under(d.path()),
                ..base.clone()
            };
            pipeline::run_all(&cfg, false, |_| {}).map_err(|e| e.to_string())?;
            Ok(["data", "split", "bundle", "eval"]
                .map(|s| (s, files_under(&d.path().join(s)))))
        })
        .collect::<Result<_, String>>()?;
    let mut count = 0;
    for ((name, a), (_, b)) in runs[0].iter().zip(&runs[1]) {
        ensure(a.keys().eq(b.keys()), || format!("{name}: different file sets"))?;
        for (path, bytes) in a {
            ensure(&b[path] == bytes, || format!("{name}/{} differs", path.display()))?;
            count += 1;
        }
    }
    ensure(runs[0][3].1.contains_key(Path::new("report.txt")), || "no report".into())?;
    Ok(format!(
        "two single-threaded runs: {count} artifacts (data, split, bundle, reports) byte-identical"
    ))
}

fn main() -> ExitCode {
    let criteria: [Criterion; 8] = [
        ("gradient correctness", gradients),
        ("AUC oracle equivalence", auc_oracle),
        ("results-table consistency", results_table),
        ("cut-off rule", cutoff_rule),
        ("ensemble-improvement analogue", ensemble_analogue),
        ("early stopping and restore", early_stopping),
        ("augmentation bounds", augmentation_bounds),
        ("end-to-end determinism", determinism),
    ];
    let only: Vec<usize> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|v| v.split(',').filter_map(|s| s.trim().parse().ok()).collect())
        .unwrap_or_default();
    panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let n = i + 1;
        if !only.is_empty() && !only.contains(&n) {
            continue;
        }
        let outcome = panic::catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        match outcome {
            Ok(detail) => println!("criterion {n} PASS  {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("criterion {n} FAIL  {name}: {detail}");
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
