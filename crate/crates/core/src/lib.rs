//! Multi-sized residual CNN ensemble for binary grayscale radiograph
//! classification.
//!
//! The crate covers the whole pipeline: NetPBM image and manifest I/O with
//! stratified splitting ([`imageio`]), label-preserving augmentation and
//! bilinear resampling ([`augment`]), a from-scratch residual CNN with exact
//! gradients ([`nn`]), RMSprop training with early stopping ([`train`]), the
//! softmax-averaging ensemble over several input resolutions ([`ensemble`]),
//! ROC/AUC evaluation and cut-off selection ([`metrics`]), a synthetic
//! dataset generator ([`synth`]) and the staged batch pipeline used by the
//! command-line tool ([`pipeline`]).

pub mod augment;
pub mod ensemble;
mod error;
pub mod imageio;
pub mod metrics;
pub mod nn;
pub mod pipeline;
pub mod rng;
pub mod synth;
pub mod train;

pub use error::{Error, Result};
