//! Multi-sized ensemble: identical networks trained on different input
//! resolutions whose softmax outputs are averaged.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::augment::AugmentConfig;
use crate::error::{Error, Result};
use crate::imageio::GrayImage;
use crate::nn::weights;
use crate::nn::{model_forward, toy_template, LayerSpec, Mode, ModelParams, ModelSpec};
use crate::rng;
use crate::train::{self, History, Sample, TrainConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleSpec {
    /// Square input side per branch, strictly decreasing.
    pub branch_sizes: Vec<usize>,
    /// Layer list shared by every branch.
    pub template: Vec<LayerSpec>,
}

impl Default for EnsembleSpec {
    fn default() -> Self {
        Self {
            branch_sizes: vec![512, 384, 256],
            template: crate::nn::fifty_layer_template(),
        }
    }
}

impl EnsembleSpec {
    /// Branch sizes 64/48/32 with the toy residual network.
    pub fn toy() -> Self {
        Self {
            branch_sizes: vec![64, 48, 32],
            template: toy_template(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.branch_sizes.is_empty() {
            return Err(Error::Config("an ensemble needs at least one branch".into()));
        }
        if self.branch_sizes.windows(2).any(|w| w[0] <= w[1]) {
            return Err(Error::Config(format!(
                "branch sizes must be strictly decreasing, got {:?}",
                self.branch_sizes
            )));
        }
        for &s in &self.branch_sizes {
            self.branch_spec(s)?;
        }
        Ok(())
    }

    pub fn branch_spec(&self, size: usize) -> Result<ModelSpec> {
        ModelSpec::new([1, size, size], self.template.clone())
    }
}

/// Seed of branch `index`, derived from the run seed.
pub fn branch_seed(run_seed: u64, index: usize) -> u64 {
    rng::derive_seed(run_seed, &format!("branch/{index}"))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Branch {
    pub size: usize,
    pub seed: u64,
    pub spec: ModelSpec,
    pub params: ModelParams,
    pub history: History,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EnsembleModel {
    pub branches: Vec<Branch>,
    /// Decision threshold on the ensemble score, once chosen.
    pub cutoff: Option<f64>,
    pub run_seed: u64,
}

/// Trains one branch: a generator seeded with `seed` initializes the weights
/// and then drives [`train::fit`].
pub fn train_branch(
    spec: &ModelSpec,
    train_set: &[Sample],
    validation: &[Sample],
    tconfig: &TrainConfig,
    aconfig: &AugmentConfig,
    seed: u64,
    observer: impl FnMut(train::EpochEvent<'_>),
) -> Result<(ModelParams, History)> {
    let mut rng = rng::seeded(seed);
    let init = ModelParams::init(spec, &mut rng)?;
    train::fit_with(spec, init, train_set, validation, tconfig, aconfig, &mut rng, observer)
}

/// Trains every branch independently. With `parallel`, branches run on
/// separate threads; they share no mutable state, so the weights are the same
/// as in sequential mode.
#[allow(clippy::too_many_arguments)]
pub fn train_ensemble(
    train_set: &[Sample],
    validation: &[Sample],
    espec: &EnsembleSpec,
    tconfig: &TrainConfig,
    aconfig: &AugmentConfig,
    run_seed: u64,
    parallel: bool,
    observer: impl Fn(usize, train::EpochEvent<'_>) + Sync,
) -> Result<EnsembleModel> {
    espec.validate()?;
    let run = |index: usize, size: usize| -> Result<Branch> {
        let spec = espec.branch_spec(size)?;
        let seed = branch_seed(run_seed, index);
        let (params, history) = train_branch(
            &spec,
            train_set,
            validation,
            tconfig,
            aconfig,
            seed,
            |ev| observer(index, ev),
        )
        .map_err(|e| Error::Branch {
            branch: index,
            source: Box::new(e),
        })?;
        Ok(Branch {
            size,
            seed,
            spec,
            params,
            history,
        })
    };

    let branches = if parallel {
        std::thread::scope(|s| {
            let handles: Vec<_> = espec
                .branch_sizes
                .iter()
                .enumerate()
                .map(|(i, &size)| {
                    let run = &run;
                    s.spawn(move || run(i, size))
                })
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("branch thread panicked"))
                .collect::<Result<Vec<_>>>()
        })?
    } else {
        espec
            .branch_sizes
            .iter()
            .enumerate()
            .map(|(i, &size)| run(i, size))
            .collect::<Result<Vec<_>>>()?
    };
    Ok(EnsembleModel {
        branches,
        cutoff: None,
        run_seed,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub per_branch: Vec<[f64; 2]>,
    pub averaged: [f64; 2],
    /// Averaged probability of the positive class.
    pub score: f64,
}

impl Prediction {
    pub fn from_branches(per_branch: Vec<[f64; 2]>) -> Result<Self> {
        if per_branch.is_empty() {
            return Err(Error::InvalidArgument("no branch outputs to average".into()));
        }
        let n = per_branch.len() as f64;
        let mut averaged = [0.0; 2];
        for p in &per_branch {
            averaged[0] += p[0];
            averaged[1] += p[1];
        }
        averaged[0] /= n;
        averaged[1] /= n;
        Ok(Self {
            score: averaged[1],
            per_branch,
            averaged,
        })
    }
}

fn branch_probs(branch: &Branch, img: &GrayImage) -> Result<[f64; 2]> {
    let x = train::prepare_input(&branch.spec, img)?;
    let (p, _) = model_forward(
        &branch.spec,
        &branch.params,
        &x,
        Mode::Infer,
        &mut rng::seeded(0),
    )?;
    Ok([p[0], p[1]])
}

/// Resizes `img` for every branch, runs each in inference mode and averages
/// the softmax outputs.
pub fn predict(model: &EnsembleModel, img: &GrayImage) -> Result<Prediction> {
    let per_branch = model
        .branches
        .iter()
        .map(|b| branch_probs(b, img))
        .collect::<Result<Vec<_>>>()?;
    Prediction::from_branches(per_branch)
}

/// Positive (`1`) when `score ≥ cutoff`.
pub fn classify(pred: &Prediction, cutoff: f64) -> Result<u8> {
    classify_score(pred.score, cutoff)
}

pub fn classify_score(score: f64, cutoff: f64) -> Result<u8> {
    if !(0.0..=1.0).contains(&cutoff) {
        return Err(Error::InvalidArgument(format!(
            "cutoff must lie in [0, 1], got {cutoff}"
        )));
    }
    Ok((score >= cutoff) as u8)
}

/// Per-branch and ensemble scores over a labeled set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreTable {
    pub labels: Vec<u8>,
    /// `branch[b][i]`: positive-class probability of branch `b` on sample `i`.
    pub branch: Vec<Vec<f64>>,
    pub ensemble: Vec<f64>,
}

pub fn score_samples(model: &EnsembleModel, samples: &[Sample]) -> Result<ScoreTable> {
    let mut branch = vec![Vec::with_capacity(samples.len()); model.branches.len()];
    let mut ensemble = Vec::with_capacity(samples.len());
    for s in samples {
        let pred = predict(model, &s.image)?;
        for (col, p) in branch.iter_mut().zip(&pred.per_branch) {
            col.push(p[1]);
        }
        ensemble.push(pred.score);
    }
    Ok(ScoreTable {
        labels: samples.iter().map(|s| s.label).collect(),
        branch,
        ensemble,
    })
}

pub const BUNDLE_MANIFEST: &str = "bundle.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BundleBranch {
    pub size: usize,
    pub seed: u64,
    pub weights: String,
    pub history: History,
}

/// `bundle.json` contents. `metrics` is an opaque snapshot written by the
/// evaluation stage.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BundleManifest {
    pub run_seed: u64,
    pub branch_sizes: Vec<usize>,
    pub branches: Vec<BundleBranch>,
    pub cutoff: Option<f64>,
    #[serde(default)]
    pub metrics: Option<serde_json::Value>,
}

impl EnsembleModel {
    pub fn manifest(&self, metrics: Option<serde_json::Value>) -> BundleManifest {
        BundleManifest {
            run_seed: self.run_seed,
            branch_sizes: self.branches.iter().map(|b| b.size).collect(),
            branches: self
                .branches
                .iter()
                .enumerate()
                .map(|(i, b)| BundleBranch {
                    size: b.size,
                    seed: b.seed,
                    weights: format!("branch{i}_{}.weights", b.size),
                    history: b.history.clone(),
                })
                .collect(),
            cutoff: self.cutoff,
            metrics,
        }
    }

    /// Writes one weight file per branch and `bundle.json` into `dir`.
    pub fn save(&self, dir: impl AsRef<Path>, metrics: Option<serde_json::Value>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let manifest = self.manifest(metrics);
        for (b, entry) in self.branches.iter().zip(&manifest.branches) {
            weights::save_weights(dir.join(&entry.weights), &b.spec, &b.params)?;
        }
        write_manifest(dir, &manifest)
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<(Self, BundleManifest)> {
        let dir = dir.as_ref();
        let manifest = read_manifest(dir)?;
        let branches = manifest
            .branches
            .iter()
            .map(|entry| {
                let (spec, params) = weights::load_weights(dir.join(&entry.weights))?;
                Ok(Branch {
                    size: entry.size,
                    seed: entry.seed,
                    spec,
                    params,
                    history: entry.history.clone(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok((
            Self {
                branches,
                cutoff: manifest.cutoff,
                run_seed: manifest.run_seed,
            },
            manifest,
        ))
    }
}

pub fn read_manifest(dir: &Path) -> Result<BundleManifest> {
    let path = dir.join(BUNDLE_MANIFEST);
    if !path.exists() {
        return Err(Error::MissingArtifact(path));
    }
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    Ok(serde_json::from_str(&text)?)
}

pub fn write_manifest(dir: &Path, manifest: &BundleManifest) -> Result<()> {
    let path = dir.join(BUNDLE_MANIFEST);
    let mut text = serde_json::to_string_pretty(manifest)?;
    text.push('\n');
    fs::write(&path, text).map_err(|e| Error::io(path, e))
}
