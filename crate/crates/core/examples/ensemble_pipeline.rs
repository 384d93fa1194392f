//! The full staged pipeline on a small configuration: synthesize, split,
//! train a three-resolution ensemble, evaluate and print the results table.
//! Every artifact lands under the output directory.
//!
//!     cargo run --example ensemble_pipeline -- [out_dir] [seed]

use std::env;
use std::path::PathBuf;

use cxr_ensemble::metrics;
use cxr_ensemble::pipeline::{self, EnsembleConfig, Paths, PipelineConfig};
use cxr_ensemble::synth::SynthConfig;
use cxr_ensemble::train::TrainConfig;

fn main() -> cxr_ensemble::Result<()> {
    let mut args = env::args().skip(1);
    let out = PathBuf::from(args.next().unwrap_or_else(|| "target/example-pipeline".into()));
    let seed: u64 = args.next().map_or(1, |s| s.parse().expect("seed must be an integer"));

    let cfg = PipelineConfig {
        seed,
        paths: Paths::under(&out),
        synth: SynthConfig {
            n_negative: 80,
            n_positive: 80,
            image_size: 64,
            blob_radius_range: [3.0, 8.0],
            blob_contrast: 0.3,
            ..Default::default()
        },
        train: TrainConfig {
            lr0: 3e-3,
            max_epochs: 10,
            patience: 4,
            phase1_epochs: 1,
            ..Default::default()
        },
        ensemble: EnsembleConfig {
            branch_sizes: vec![48, 32, 24],
            ..EnsembleConfig::toy()
        },
        ..PipelineConfig::default()
    };
    let results = pipeline::run_all(&cfg, false, |line| println!("{line}"))?;
    print!("\n{}", metrics::report(&results.rows)?.render_text());
    println!("ensemble cut-off {:.4}", results.cutoffs[0]);
    println!("artifacts under {}", out.display());
    Ok(())
}
