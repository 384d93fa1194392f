//! Staged batch pipeline: `synth → split → train → eval`, plus `predict`,
//! `report` and an augmentation preview.
//!
//! Every stage reads the previous stage's artifacts from disk, writes its own
//! into a directory, and leaves a `provenance.json` there recording the
//! configuration hash, the seed and the SHA-256 of each input artifact.
//!
//! Seeds: a run seed `s` gives the synth stage `derive_seed(s, "synth")`, the
//! split stage `derive_seed(s, "split")` and the train stage
//! `derive_seed(s, "train")`, from which branch `i` takes
//! [`ensemble::branch_seed`]`(train_seed, i)`.
//!
//! Artifacts never embed absolute paths or timings, so two runs from the same
//! configuration produce byte-identical data, splits, bundles and reports.
//! Wall-clock timings only go to the training log.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Component, Path, PathBuf};
use std::str::FromStr;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::augment::{self, AugmentConfig};
use crate::ensemble::{self, EnsembleModel, EnsembleSpec};
use crate::error::{Error, Result};
use crate::imageio::{self, DatasetSplit, GrayImage, ManifestEntry, PgmEncoding};
use crate::metrics::{self, ResultRow};
use crate::nn::{fifty_layer_template, toy_template, LayerSpec};
use crate::rng;
use crate::synth::{self, SynthConfig};
use crate::train::{Checkpoint, Sample, TrainConfig};

pub const PROVENANCE: &str = "provenance.json";
pub const REPORT_TEXT: &str = "report.txt";
pub const RESULTS_JSON: &str = "results.json";
pub const TRAIN_LOG: &str = "train.log";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CutoffSet {
    Validation,
    Test,
}

impl FromStr for CutoffSet {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "validation" => Ok(Self::Validation),
            "test" => Ok(Self::Test),
            other => Err(Error::Config(format!(
                "cutoff set must be \"validation\" or \"test\", got {other:?}"
            ))),
        }
    }
}

/// Stage directories. Relative paths in a config file are taken relative to
/// the file's directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub data: PathBuf,
    pub split: PathBuf,
    pub bundle: PathBuf,
    pub eval: PathBuf,
    pub logs: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            data: "data".into(),
            split: "split".into(),
            bundle: "bundle".into(),
            eval: "eval".into(),
            logs: "logs".into(),
        }
    }
}

impl Paths {
    /// Every path placed under `root`.
    pub fn under(root: impl AsRef<Path>) -> Self {
        let mut p = Self::default();
        p.rebase(root.as_ref());
        p
    }

    fn rebase(&mut self, root: &Path) {
        for p in [
            &mut self.data,
            &mut self.split,
            &mut self.bundle,
            &mut self.eval,
            &mut self.logs,
        ] {
            if p.is_relative() {
                *p = root.join(&*p);
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    Toy,
    FiftyLayer,
}

/// A named preset or an explicit layer list.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Architecture {
    Preset(Preset),
    Layers(Vec<LayerSpec>),
}

impl Architecture {
    pub fn layers(&self) -> Vec<LayerSpec> {
        match self {
            Self::Preset(Preset::Toy) => toy_template(),
            Self::Preset(Preset::FiftyLayer) => fifty_layer_template(),
            Self::Layers(l) => l.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnsembleConfig {
    pub branch_sizes: Vec<usize>,
    pub architecture: Architecture,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        Self {
            branch_sizes: vec![512, 384, 256],
            architecture: Architecture::Preset(Preset::FiftyLayer),
        }
    }
}

impl EnsembleConfig {
    pub fn toy() -> Self {
        Self {
            branch_sizes: vec![64, 48, 32],
            architecture: Architecture::Preset(Preset::Toy),
        }
    }

    pub fn spec(&self) -> EnsembleSpec {
        EnsembleSpec {
            branch_sizes: self.branch_sizes.clone(),
            template: self.architecture.layers(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub cutoff_set: CutoffSet,
    pub paths: Paths,
    pub synth: SynthConfig,
    pub augment: AugmentConfig,
    pub train: TrainConfig,
    pub ensemble: EnsembleConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            cutoff_set: CutoffSet::Validation,
            paths: Paths::default(),
            synth: SynthConfig::default(),
            augment: AugmentConfig::default(),
            train: TrainConfig::default(),
            ensemble: EnsembleConfig::default(),
        }
    }
}

/// Splits `key=value`. The value is parsed as a TOML value when possible
/// and taken as a bare string otherwise.
pub fn parse_override(s: &str) -> Result<(String, toml::Value)> {
    let (key, raw) = s
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override must look like key=value, got {s:?}")))?;
    let key = key.trim();
    if key.is_empty() || key.split('.').any(str::is_empty) {
        return Err(Error::Config(format!("bad override key {key:?}")));
    }
    let raw = raw.trim();
    let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    Ok((key.to_string(), value))
}

fn apply_override(table: &mut toml::Table, key: &str, value: toml::Value) -> Result<()> {
    let mut parts: Vec<&str> = key.split('.').collect();
    let last = parts.pop().expect("non-empty key");
    let mut t = table;
    for p in parts {
        let entry = t
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        t = entry
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("override {key}: {p} is not a table")))?;
    }
    t.insert(last.to_string(), value);
    Ok(())
}

impl PipelineConfig {
    /// Desk-scale preset: 625 synthetic 128² images (400/100/125 after the
    /// split), the toy network at 64/48/32, and a training schedule suited to
    /// training from scratch.
    pub fn toy() -> Self {
        Self {
            synth: SynthConfig {
                n_negative: 313,
                n_positive: 312,
                ..SynthConfig::default()
            },
            train: TrainConfig {
                lr0: 3e-3,
                max_epochs: 24,
                patience: 8,
                phase1_epochs: 1,
                ..TrainConfig::default()
            },
            ensemble: EnsembleConfig::toy(),
            ..Self::default()
        }
    }

    /// Parses TOML text and applies `key=value` overrides on top. Missing
    /// fields take their defaults; unknown fields are rejected.
    pub fn from_toml(text: &str, overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table =
            toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        for o in overrides {
            let (k, v) = parse_override(o)?;
            apply_override(&mut table, &k, v)?;
        }
        let cfg: Self = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads `path` (or starts from defaults) and applies overrides. Relative
    /// stage paths are resolved against the file's directory.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let Some(path) = path else {
            return Self::from_toml("", overrides);
        };
        if !path.exists() {
            return Err(Error::MissingArtifact(path.to_path_buf()));
        }
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml(&text, overrides)?;
        if let Some(dir) = path.parent() {
            cfg.paths.rebase(dir);
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.synth.validate()?;
        self.augment.validate()?;
        self.train.validate()?;
        self.ensemble.spec().validate()
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// SHA-256 of the serialized configuration with the stage paths left
    /// out, so relocating a run does not change it.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.paths = Paths::default();
        sha256_hex(c.to_toml().as_bytes())
    }

    pub fn synth_seed(&self) -> u64 {
        rng::derive_seed(self.seed, "synth")
    }

    pub fn split_seed(&self) -> u64 {
        split_seed(self.seed)
    }

    pub fn train_seed(&self) -> u64 {
        rng::derive_seed(self.seed, "train")
    }
}

pub fn split_seed(run_seed: u64) -> u64 {
    rng::derive_seed(run_seed, "split")
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn file_hash(path: &Path) -> Result<String> {
    if !path.exists() {
        return Err(Error::MissingArtifact(path.to_path_buf()));
    }
    Ok(sha256_hex(&fs::read(path).map_err(|e| Error::io(path, e))?))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub stage: String,
    pub crate_version: String,
    pub config_sha256: Option<String>,
    pub seed: Option<u64>,
    /// Input artifact name → SHA-256.
    pub inputs: BTreeMap<String, String>,
}

impl Provenance {
    fn new(stage: &str, config: Option<&PipelineConfig>, seed: Option<u64>) -> Self {
        Self {
            stage: stage.into(),
            crate_version: env!("CARGO_PKG_VERSION").into(),
            config_sha256: config.map(PipelineConfig::hash),
            seed,
            inputs: BTreeMap::new(),
        }
    }

    fn input(&mut self, name: impl Into<String>, path: &Path) -> Result<()> {
        self.inputs.insert(name.into(), file_hash(path)?);
        Ok(())
    }

    fn write(&self, dir: &Path) -> Result<()> {
        write_text(&dir.join(PROVENANCE), &(serde_json::to_string_pretty(self)? + "\n"))
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let path = dir.join(PROVENANCE);
        if !path.exists() {
            return Err(Error::MissingArtifact(path));
        }
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn absolute(p: &Path) -> Result<PathBuf> {
    std::path::absolute(p).map_err(|e| Error::io(p, e))
}

/// `target` expressed relative to `base`; both are made absolute first.
fn relative_to(target: &Path, base: &Path) -> Result<PathBuf> {
    let normal = |p: &Path| -> Result<Vec<std::ffi::OsString>> {
        let mut out = Vec::new();
        for c in absolute(p)?.components() {
            match c {
                Component::ParentDir => {
                    out.pop();
                }
                Component::Normal(s) => out.push(s.to_os_string()),
                Component::RootDir | Component::Prefix(_) => out.push(c.as_os_str().to_os_string()),
                Component::CurDir => {}
            }
        }
        Ok(out)
    };
    let (t, b) = (normal(target)?, normal(base)?);
    let common = t.iter().zip(&b).take_while(|(x, y)| x == y).count();
    let mut rel = PathBuf::new();
    for _ in common..b.len() {
        rel.push("..");
    }
    for c in &t[common..] {
        rel.push(c);
    }
    Ok(rel)
}

/// Summary of a stage run, for printing.
pub type Summary = String;

/// Generates the synthetic dataset into `paths.data`.
pub fn run_synth(cfg: &PipelineConfig) -> Result<Summary> {
    let dir = &cfg.paths.data;
    let data = synth::generate(&cfg.synth, cfg.synth_seed())?;
    let entries = synth::write_dataset(dir, &data)?;
    Provenance::new("synth", Some(cfg), Some(cfg.seed)).write(dir)?;
    let pos = entries.iter().filter(|e| e.label == 1).count();
    Ok(format!(
        "wrote {} images ({} positive, {} negative) and {} to {}",
        entries.len(),
        pos,
        entries.len() - pos,
        synth::MANIFEST_NAME,
        dir.display()
    ))
}

/// Default split directory for a manifest: `split` beside the manifest's
/// directory.
pub fn default_split_dir(manifest: &Path) -> PathBuf {
    let dir = manifest.parent().unwrap_or(Path::new(""));
    match dir.parent() {
        Some(p) => p.join("split"),
        None => PathBuf::from("split"),
    }
}

/// Stratified split of `manifest` with seed `derive_seed(run_seed, "split")`.
/// Entry paths are rewritten relative to `out`.
pub fn run_split(manifest: &Path, run_seed: u64, out: &Path) -> Result<DatasetSplit> {
    if !manifest.exists() {
        return Err(Error::MissingArtifact(manifest.to_path_buf()));
    }
    let base = manifest.parent().unwrap_or(Path::new(""));
    let entries = imageio::load_manifest(manifest)?
        .into_iter()
        .map(|e| {
            let rel = relative_to(&base.join(&e.path), out)?;
            Ok(ManifestEntry::new(rel, e.label))
        })
        .collect::<Result<Vec<_>>>()?;
    let split = imageio::split_dataset(&entries, split_seed(run_seed))?;
    split.save(out)?;
    let mut prov = Provenance::new("split", None, Some(run_seed));
    prov.input("manifest", manifest)?;
    prov.write(out)?;
    Ok(split)
}

fn load_samples(dir: &Path, entries: &[ManifestEntry]) -> Result<Vec<Sample>> {
    entries
        .iter()
        .map(|e| {
            Ok(Sample {
                image: imageio::load_image(dir.join(&e.path))?,
                label: e.label,
            })
        })
        .collect()
}

fn split_inputs(prov: &mut Provenance, split_dir: &Path) -> Result<()> {
    for name in imageio::SPLIT_FILES.iter().chain([&imageio::SPLIT_SIDECAR]) {
        prov.input(format!("split/{name}"), &split_dir.join(name))?;
    }
    Ok(())
}

fn bundle_inputs(prov: &mut Provenance, bundle: &Path, manifest: &ensemble::BundleManifest) -> Result<()> {
    for b in &manifest.branches {
        prov.input(format!("bundle/{}", b.weights), &bundle.join(&b.weights))?;
    }
    Ok(())
}

/// Trains the ensemble on `paths.split`, writes the bundle to `paths.bundle`
/// and per-epoch lines (with elapsed time) to `paths.logs/train.log`. The
/// latest checkpoint of each branch is kept under `paths.logs/checkpoints`.
/// Log lines are also passed to `echo`.
pub fn run_train(
    cfg: &PipelineConfig,
    parallel: bool,
    echo: impl Fn(&str) + Sync,
) -> Result<EnsembleModel> {
    let split_dir = &cfg.paths.split;
    let split = DatasetSplit::load(split_dir)?;
    let train_set = load_samples(split_dir, &split.train)?;
    let validation = load_samples(split_dir, &split.validation)?;

    let ckpt_dir = cfg.paths.logs.join("checkpoints");
    create_dir(&ckpt_dir)?;
    let log_path = cfg.paths.logs.join(TRAIN_LOG);
    let log = Mutex::new(fs::File::create(&log_path).map_err(|e| Error::io(&log_path, e))?);
    let failure: Mutex<Option<Error>> = Mutex::new(None);
    let espec = cfg.ensemble.spec();

    let model = ensemble::train_ensemble(
        &train_set,
        &validation,
        &espec,
        &cfg.train,
        &cfg.augment,
        cfg.train_seed(),
        parallel,
        |branch, ev| {
            let r = ev.record;
            let size = espec.branch_sizes[branch];
            let line = format!(
                "branch {branch} size {size} epoch {} phase {} lr {:.3e} train_loss {:.6} val_loss {:.6}{} elapsed {:.1}s",
                r.epoch,
                r.phase,
                r.lr,
                r.train_loss,
                r.val_loss,
                if ev.is_best { " best" } else { "" },
                ev.elapsed_secs
            );
            echo(&line);
            let ckpt = espec.branch_spec(size).map(|spec| Checkpoint {
                epoch: r.epoch as u64,
                spec,
                params: ev.params.clone(),
                state: ev.state.clone(),
            });
            let result = writeln!(log.lock().expect("log lock"), "{line}")
                .map_err(|e| Error::io(&log_path, e))
                .and(ckpt)
                .and_then(|c| c.save(ckpt_dir.join(format!("branch{branch}_{size}.ckpt"))));
            if let Err(e) = result {
                failure.lock().expect("failure lock").get_or_insert(e);
            }
        },
    )?;
    if let Some(e) = failure.into_inner().expect("failure lock") {
        return Err(e);
    }

    let bundle = &cfg.paths.bundle;
    model.save(bundle, None)?;
    let mut prov = Provenance::new("train", Some(cfg), Some(cfg.seed));
    split_inputs(&mut prov, split_dir)?;
    prov.write(bundle)?;
    write_text(&bundle.join("config.toml"), &{
        let mut c = cfg.clone();
        c.paths = Paths::default();
        c.to_toml()
    })?;
    Ok(model)
}

pub fn train_summary(model: &EnsembleModel) -> Summary {
    let mut s = String::new();
    for (i, b) in model.branches.iter().enumerate() {
        let best = &b.history.epochs[b.history.best_epoch - 1];
        let _ = writeln!(
            s,
            "branch {i} size {}: {} epochs{}, best epoch {} (val_loss {:.6})",
            b.size,
            b.history.epochs.len(),
            if b.history.stopped_early { " (stopped early)" } else { "" },
            b.history.best_epoch,
            best.val_loss
        );
    }
    s
}

/// Stored evaluation results: the `report` command re-renders these.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalResults {
    pub cutoff_set: CutoffSet,
    /// Per row, the threshold chosen on the cut-off set.
    pub cutoffs: Vec<f64>,
    pub rows: Vec<ResultRow>,
}

pub fn model_name(size: usize) -> String {
    format!("Model {size}")
}

/// Scores the test split with every branch and the ensemble. Each row's
/// threshold maximizes `Sp + Se` on the `cutoff_set` subset; AUC, Sp and Se
/// are measured on the test subset. Writes `report.txt`, `results.json` and
/// one ROC table per row into `out`, and stores the ensemble cut-off and the
/// results in the bundle's `bundle.json`.
pub fn run_eval(bundle: &Path, split_dir: &Path, cutoff_set: CutoffSet, out: &Path) -> Result<EvalResults> {
    let (mut model, manifest) = EnsembleModel::load(bundle)?;
    let split = DatasetSplit::load(split_dir)?;
    let test = load_samples(split_dir, &split.test)?;
    let test_scores = ensemble::score_samples(&model, &test)?;
    let select_scores = match cutoff_set {
        CutoffSet::Test => test_scores.clone(),
        CutoffSet::Validation => {
            ensemble::score_samples(&model, &load_samples(split_dir, &split.validation)?)?
        }
    };

    create_dir(out)?;
    let mut columns = vec![("Ensemble".to_string(), "ensemble".to_string())];
    for b in &model.branches {
        columns.push((model_name(b.size), format!("model_{}", b.size)));
    }
    let mut rows = Vec::new();
    let mut cutoffs = Vec::new();
    for (k, (name, file)) in columns.iter().enumerate() {
        let (sel, tst) = if k == 0 {
            (&select_scores.ensemble, &test_scores.ensemble)
        } else {
            (&select_scores.branch[k - 1], &test_scores.branch[k - 1])
        };
        let sel = metrics::scored(sel, &select_scores.labels);
        // Scores are probabilities, so the curve's +inf sentinel becomes 1.
        let threshold = metrics::choose_cutoff(&metrics::roc_curve(&sel)?, &sel)?
            .threshold
            .min(1.0);
        let tst = metrics::scored(tst, &test_scores.labels);
        let curve = metrics::roc_curve(&tst)?;
        let stats = metrics::sp_se_acc(&metrics::confusion_at(&tst, threshold)?)?;
        write_text(&out.join(format!("roc_{file}.tsv")), &metrics::roc_table(&curve))?;
        rows.push(ResultRow {
            model: name.clone(),
            auc: metrics::auc(&curve),
            sp: stats.sp,
            se: stats.se,
            acc: Some(stats.acc),
        });
        cutoffs.push(threshold);
    }

    let results = EvalResults {
        cutoff_set,
        cutoffs,
        rows,
    };
    let report = metrics::report(&results.rows)?;
    write_text(&out.join(REPORT_TEXT), &report.render_text())?;
    write_text(
        &out.join(RESULTS_JSON),
        &(serde_json::to_string_pretty(&results)? + "\n"),
    )?;

    model.cutoff = Some(results.cutoffs[0]);
    model.save(bundle, Some(serde_json::to_value(&results)?))?;

    let mut prov = Provenance::new("eval", None, None);
    bundle_inputs(&mut prov, bundle, &manifest)?;
    split_inputs(&mut prov, split_dir)?;
    prov.write(out)?;
    Ok(results)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictLine {
    pub path: PathBuf,
    pub score: f64,
    pub class: u8,
}

/// Ensemble score and class for each image, using the bundle's stored
/// cut-off.
pub fn run_predict(bundle: &Path, images: &[PathBuf]) -> Result<Vec<PredictLine>> {
    let (model, _) = EnsembleModel::load(bundle)?;
    let cutoff = model.cutoff.ok_or_else(|| {
        Error::Config(format!(
            "{} has no cut-off yet; run eval first",
            bundle.join(ensemble::BUNDLE_MANIFEST).display()
        ))
    })?;
    images
        .iter()
        .map(|p| {
            let pred = ensemble::predict(&model, &imageio::load_image(p)?)?;
            Ok(PredictLine {
                path: p.clone(),
                score: pred.score,
                class: ensemble::classify(&pred, cutoff)?,
            })
        })
        .collect()
}

pub fn format_predictions(lines: &[PredictLine]) -> String {
    let mut s = String::from("# path\tscore\tclass\n");
    for l in lines {
        let _ = writeln!(s, "{}\t{:.6}\t{}", l.path.display(), l.score, l.class);
    }
    s
}

/// Re-renders a stored `results.json` as the text table.
pub fn run_report(results: &Path) -> Result<String> {
    if !results.exists() {
        return Err(Error::MissingArtifact(results.to_path_buf()));
    }
    let text = fs::read_to_string(results).map_err(|e| Error::io(results, e))?;
    let stored: EvalResults = serde_json::from_str(&text)?;
    Ok(metrics::report(&stored.rows)?.render_text())
}

/// Writes `count` augmented copies of `image` into `out` (binary PGM) along
/// with `params.json` listing the sampled parameters.
pub fn augment_preview(
    image: &Path,
    config: &AugmentConfig,
    seed: u64,
    count: usize,
    out: &Path,
) -> Result<Vec<augment::AugmentParams>> {
    let img: GrayImage = imageio::load_image(image)?;
    create_dir(out)?;
    let mut r = rng::seeded(rng::derive_seed(seed, "augment-preview"));
    let mut all = Vec::with_capacity(count);
    for i in 0..count {
        let p = augment::sample_params(&mut r, config)?;
        let a = augment::apply(&img, &p);
        imageio::save_image(out.join(format!("aug_{i:03}.pgm")), &a, PgmEncoding::Binary)?;
        all.push(p);
    }
    write_text(
        &out.join("params.json"),
        &(serde_json::to_string_pretty(&all)? + "\n"),
    )?;
    Ok(all)
}

/// Runs synth, split, train and eval in order from one configuration.
pub fn run_all(
    cfg: &PipelineConfig,
    parallel: bool,
    echo: impl Fn(&str) + Sync,
) -> Result<EvalResults> {
    echo(&run_synth(cfg)?);
    let manifest = cfg.paths.data.join(synth::MANIFEST_NAME);
    run_split(&manifest, cfg.seed, &cfg.paths.split)?;
    let model = run_train(cfg, parallel, &echo)?;
    echo(train_summary(&model).trim_end());
    run_eval(&cfg.paths.bundle, &cfg.paths.split, cfg.cutoff_set, &cfg.paths.eval)
}
