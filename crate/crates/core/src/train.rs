//! RMSprop training with learning-rate decay, two-phase fine-tuning, early
//! stopping on validation loss, and best-epoch restore.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::augment::{self, AugmentConfig};
use crate::error::{Error, Result};
use crate::imageio::GrayImage;
use crate::nn::weights::{self, Reader};
use crate::nn::{model_backward, model_forward, Mode, ModelParams, ModelSpec, Tensor};
use crate::rng::{self, Rng};

/// Probabilities are clamped to at least this value inside the log.
pub const PROB_FLOOR: f64 = 1e-12;

/// `−ln(clamp(probs[label], 1e−12, 1))`.
pub fn cross_entropy(probs: &[f64], label: u8) -> Result<f64> {
    let sum: f64 = probs.iter().sum();
    let valid = probs.len() > label as usize
        && probs.iter().all(|p| p.is_finite() && *p >= 0.0)
        && (sum - 1.0).abs() <= 1e-9;
    if !valid {
        return Err(Error::InvalidArgument(format!(
            "cross entropy needs a probability vector with an entry for label {label}, got {probs:?}"
        )));
    }
    Ok(-probs[label as usize].clamp(PROB_FLOOR, 1.0).ln())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecayUnit {
    /// `t` counts optimizer steps.
    Step,
    /// `t` counts completed epochs.
    Epoch,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr0: f64,
    pub decay: f64,
    pub decay_unit: DecayUnit,
    pub rho: f64,
    pub epsilon: f64,
    pub batch_size: usize,
    pub patience: usize,
    pub max_epochs: usize,
    pub phase1_epochs: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr0: 1e-4,
            decay: 1e-8,
            decay_unit: DecayUnit::Step,
            rho: 0.9,
            epsilon: 1e-8,
            batch_size: 16,
            patience: 3,
            max_epochs: 50,
            phase1_epochs: 3,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lr0 > 0.0
            && self.lr0.is_finite()
            && self.decay >= 0.0
            && (0.0..1.0).contains(&self.rho)
            && self.epsilon > 0.0
            && self.patience >= 1
            && self.batch_size >= 1
            && self.max_epochs >= 1;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid training config {self:?}")))
        }
    }

    /// `lr0 / (1 + decay · t)`.
    pub fn learning_rate(&self, state: &RmsState) -> f64 {
        let t = match self.decay_unit {
            DecayUnit::Step => state.step,
            DecayUnit::Epoch => state.epoch,
        };
        self.lr0 / (1.0 + self.decay * t as f64)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RmsState {
    pub mean_sq: ModelParams,
    /// Optimizer steps taken so far.
    pub step: u64,
    /// Epochs completed so far.
    pub epoch: u64,
}

impl RmsState {
    pub fn new(params: &ModelParams) -> Self {
        Self {
            mean_sq: params.zeros_like(),
            step: 0,
            epoch: 0,
        }
    }
}

/// One RMSprop update of every trainable parameter:
/// `E ← ρE + (1−ρ)g²`, `θ ← θ − lr_t · g / (√E + ε)`, then `t ← t + 1`.
pub fn rmsprop_step(
    params: &mut ModelParams,
    grads: &ModelParams,
    state: &mut RmsState,
    config: &TrainConfig,
) -> Result<()> {
    if !params.same_layout(grads) || !params.same_layout(&state.mean_sq) {
        return Err(Error::InvalidArgument(
            "parameter, gradient and optimizer state shapes differ".into(),
        ));
    }
    let lr = config.learning_rate(state);
    let (rho, eps) = (config.rho, config.epsilon);
    for ((layer, g), e) in params
        .layers
        .iter_mut()
        .zip(&grads.layers)
        .zip(&mut state.mean_sq.layers)
    {
        if !layer.trainable {
            continue;
        }
        for ((theta, g), e) in layer.tensors.iter_mut().zip(&g.tensors).zip(&mut e.tensors) {
            for ((t, &g), e) in theta
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(e.data_mut())
            {
                *e = rho * *e + (1.0 - rho) * g * g;
                *t -= lr * g / (e.sqrt() + eps);
            }
        }
    }
    state.step += 1;
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub phase: u8,
    pub lr: f64,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
    /// 1-based epoch with the lowest validation loss (earliest on ties).
    pub best_epoch: usize,
    pub stopped_early: bool,
}

impl History {
    pub fn val_losses(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.val_loss).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopDecision {
    Continue,
    Stop,
}

/// 1-based index of the first strict minimum, or `None` for an empty slice.
pub fn best_epoch(val_losses: &[f64]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &v) in val_losses.iter().enumerate() {
        if best.is_none_or(|(_, b)| v < b) {
            best = Some((i, v));
        }
    }
    best.map(|(i, _)| i + 1)
}

/// Stops once the last `patience` epochs all failed to strictly improve on
/// the best loss seen before them.
pub fn early_stop(val_losses: &[f64], patience: usize) -> StopDecision {
    match best_epoch(val_losses) {
        Some(best) if val_losses.len() - best >= patience => StopDecision::Stop,
        _ => StopDecision::Continue,
    }
}

/// A labeled image at source resolution.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub image: GrayImage,
    pub label: u8,
}

/// Single-channel network input with intensities mapped linearly from
/// `[0, max_value]` to `[-1, 1]`.
pub fn image_tensor(img: &GrayImage) -> Tensor {
    let data = img.to_unit().into_iter().map(|v| 2.0 * v - 1.0).collect();
    Tensor::new(vec![1, img.height(), img.width()], data).expect("positive extents")
}

/// Resizes to the model's input size and converts to a tensor.
pub fn prepare_input(spec: &ModelSpec, img: &GrayImage) -> Result<Tensor> {
    let [c, h, w] = spec.input_size;
    if c != 1 {
        return Err(Error::InvalidArgument(format!(
            "grayscale input needs one channel, model has {c}"
        )));
    }
    Ok(image_tensor(&augment::resize_bilinear(img, w, h)?))
}

/// Mean cross-entropy in inference mode.
pub fn evaluate_loss(spec: &ModelSpec, params: &ModelParams, inputs: &[(Tensor, u8)]) -> Result<f64> {
    if inputs.is_empty() {
        return Err(Error::InvalidArgument("no samples to evaluate".into()));
    }
    // inference never draws from the generator
    let mut unused = rng::seeded(0);
    let mut total = 0.0;
    for (x, label) in inputs {
        let (probs, _) = model_forward(spec, params, x, Mode::Infer, &mut unused)?;
        total += cross_entropy(&probs, *label)?;
    }
    Ok(total / inputs.len() as f64)
}

/// Per-epoch notification passed to a [`fit_with`] observer.
pub struct EpochEvent<'a> {
    pub record: &'a EpochRecord,
    pub params: &'a ModelParams,
    pub state: &'a RmsState,
    pub is_best: bool,
    pub elapsed_secs: f64,
}

/// [`fit_with`] without an observer.
pub fn fit(
    spec: &ModelSpec,
    init: ModelParams,
    train: &[Sample],
    validation: &[Sample],
    tconfig: &TrainConfig,
    aconfig: &AugmentConfig,
    rng: &mut Rng,
) -> Result<(ModelParams, History)> {
    fit_with(spec, init, train, validation, tconfig, aconfig, rng, |_| {})
}

/// Trains `init` on `train`, validating on `validation` after each epoch.
///
/// Epochs `1..=phase1_epochs` update only the layers after the global average
/// pool; later epochs update everything. Each epoch reshuffles the training
/// set and draws fresh augmentation parameters for every image (augmentation
/// at source resolution, then resize to the model input). Validation images
/// are resized but never augmented. Early stopping is only checked once
/// `patience` epochs of the second phase have run. The returned parameters
/// are those of the best validation epoch, with every layer marked trainable.
#[allow(clippy::too_many_arguments)]
pub fn fit_with(
    spec: &ModelSpec,
    init: ModelParams,
    train: &[Sample],
    validation: &[Sample],
    tconfig: &TrainConfig,
    aconfig: &AugmentConfig,
    rng: &mut Rng,
    mut observer: impl FnMut(EpochEvent<'_>),
) -> Result<(ModelParams, History)> {
    tconfig.validate()?;
    aconfig.validate()?;
    spec.validate()?;
    init.check_matches(spec)?;
    if train.is_empty() || validation.is_empty() {
        return Err(Error::InvalidArgument(
            "training and validation sets must be non-empty".into(),
        ));
    }

    let val_inputs = validation
        .iter()
        .map(|s| Ok((prepare_input(spec, &s.image)?, s.label)))
        .collect::<Result<Vec<_>>>()?;

    let head = spec.head_start();
    let mut params = init;
    let mut state = RmsState::new(&params);
    let mut history = History::default();
    let mut best: Option<(f64, ModelParams)> = None;
    let mut order: Vec<usize> = (0..train.len()).collect();
    let started = std::time::Instant::now();

    for epoch in 1..=tconfig.max_epochs {
        let phase = if epoch <= tconfig.phase1_epochs { 1 } else { 2 };
        params.set_trainable(|i| phase == 2 || i >= head);
        let lr = tconfig.learning_rate(&state);

        rng::shuffle(rng, &mut order);
        let mut loss_sum = 0.0;
        for (b, chunk) in order.chunks(tconfig.batch_size).enumerate() {
            let batch = chunk
                .iter()
                .map(|&i| {
                    let s = &train[i];
                    let p = augment::sample_params(rng, aconfig)?;
                    let img = augment::apply(&s.image, &p);
                    Ok((prepare_input(spec, &img)?, s.label))
                })
                .collect::<Result<Vec<_>>>()?;
            let (loss, grads) = model_backward(spec, &params, &batch, Mode::Train, rng)?;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, batch: b });
            }
            rmsprop_step(&mut params, &grads, &mut state, tconfig)?;
            if !params.tensors().all(Tensor::is_finite) {
                return Err(Error::NonFiniteLoss { epoch, batch: b });
            }
            loss_sum += loss * batch.len() as f64;
        }
        state.epoch += 1;

        let val_loss = evaluate_loss(spec, &params, &val_inputs)?;
        if !val_loss.is_finite() {
            return Err(Error::NonFiniteLoss { epoch, batch: 0 });
        }
        let record = EpochRecord {
            epoch,
            phase,
            lr,
            train_loss: loss_sum / train.len() as f64,
            val_loss,
        };
        let is_best = best.as_ref().is_none_or(|(b, _)| val_loss < *b);
        if is_best {
            best = Some((val_loss, params.clone()));
        }
        observer(EpochEvent {
            record: &record,
            params: &params,
            state: &state,
            is_best,
            elapsed_secs: started.elapsed().as_secs_f64(),
        });
        history.epochs.push(record);

        let phase2_epochs = epoch.saturating_sub(tconfig.phase1_epochs);
        if phase2_epochs >= tconfig.patience
            && early_stop(&history.val_losses(), tconfig.patience) == StopDecision::Stop
        {
            history.stopped_early = true;
            break;
        }
    }

    history.best_epoch = best_epoch(&history.val_losses()).expect("at least one epoch");
    let (_, mut restored) = best.expect("at least one epoch");
    restored.set_trainable(|_| true);
    Ok((restored, history))
}

/// Model weights plus optimizer state at the end of an epoch.
///
/// On disk: magic `"CXRC"`, version `u32`, epoch `u64`, optimizer step `u64`,
/// optimizer epoch `u64`, the weight file (length-prefixed `u64`), then the
/// squared-gradient averages in the weight file's layer layout. Little-endian
/// throughout.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub epoch: u64,
    pub spec: ModelSpec,
    pub params: ModelParams,
    pub state: RmsState,
}

const CHECKPOINT_MAGIC: &[u8; 4] = b"CXRC";

impl Checkpoint {
    pub fn encode(&self) -> Vec<u8> {
        let mut buf = CHECKPOINT_MAGIC.to_vec();
        weights::put_u32(&mut buf, weights::VERSION);
        weights::put_u64(&mut buf, self.epoch);
        weights::put_u64(&mut buf, self.state.step);
        weights::put_u64(&mut buf, self.state.epoch);
        let w = weights::encode_weights(&self.spec, &self.params);
        weights::put_u64(&mut buf, w.len() as u64);
        buf.extend_from_slice(&w);
        weights::put_params(&mut buf, &self.state.mean_sq);
        buf
    }

    pub fn decode(bytes: &[u8]) -> std::result::Result<Self, String> {
        let mut r = Reader::new(bytes);
        if r.take(4)? != CHECKPOINT_MAGIC {
            return Err("not a checkpoint (bad magic)".into());
        }
        let version = r.u32()?;
        if version != weights::VERSION {
            return Err(format!("unsupported checkpoint version {version}"));
        }
        let epoch = r.u64()?;
        let step = r.u64()?;
        let opt_epoch = r.u64()?;
        let len = r.u64()? as usize;
        let (spec, params) = weights::decode_weights(r.take(len)?)?;
        let mean_sq = weights::read_params(&mut r)?;
        if !r.finished() || !mean_sq.same_layout(&params) {
            return Err("optimizer state does not match the weights".into());
        }
        Ok(Self {
            epoch,
            spec,
            params,
            state: RmsState {
                mean_sq,
                step,
                epoch: opt_epoch,
            },
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.encode()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode(&bytes).map_err(|m| Error::format(path, m))
    }
}
