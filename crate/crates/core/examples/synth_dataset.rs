//! Generates a small synthetic dataset, writes it as PGM files plus a
//! manifest, and splits it into train/validation/test.
//!
//!     cargo run --example synth_dataset -- [out_dir] [seed]

use std::env;
use std::path::PathBuf;

use cxr_ensemble::imageio::split_dataset;
use cxr_ensemble::synth::{self, SynthConfig};

fn main() -> cxr_ensemble::Result<()> {
    let mut args = env::args().skip(1);
    let out = PathBuf::from(args.next().unwrap_or_else(|| "target/example-synth".into()));
    let seed: u64 = args.next().map_or(1, |s| s.parse().expect("seed must be an integer"));

    let cfg = SynthConfig {
        n_negative: 50,
        n_positive: 50,
        image_size: 64,
        ..Default::default()
    };
    let data = synth::generate(&cfg, seed)?;
    let entries = synth::write_dataset(&out, &data)?;
    println!("wrote {} images to {}", entries.len(), out.display());

    let radii: Vec<f64> = data.blobs.iter().flatten().map(|b| b.radius).collect();
    let mean = radii.iter().sum::<f64>() / radii.len() as f64;
    println!("{} positives, mean blob semi-axis {mean:.2}px", radii.len());

    let split = split_dataset(&entries, seed)?;
    for (name, subset) in ["train", "validation", "test"].iter().zip(split.subsets()) {
        let pos = subset.iter().filter(|e| e.label == 1).count();
        println!("{name:>10}: {:3} images, {pos:3} positive", subset.len());
    }
    split.save(out.join("split"))?;
    Ok(())
}
