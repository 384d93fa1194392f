//! Draws random augmentations of one synthetic image and writes each result
//! next to the original.
//!
//!     cargo run --example augment_preview -- [out_dir]

use std::env;
use std::path::PathBuf;

use cxr_ensemble::augment::{self, AugmentConfig};
use cxr_ensemble::imageio::{save_image, PgmEncoding};
use cxr_ensemble::rng;
use cxr_ensemble::synth::{self, SynthConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = PathBuf::from(env::args().nth(1).unwrap_or_else(|| "target/example-augment".into()));
    std::fs::create_dir_all(&out)?;

    let cfg = SynthConfig {
        n_negative: 1,
        n_positive: 1,
        image_size: 96,
        blob_contrast: 0.35,
        ..Default::default()
    };
    let data = synth::generate(&cfg, 7)?;
    let positive = data.labels.iter().position(|&l| l == 1).unwrap();
    let original = &data.images[positive];
    save_image(out.join("original.pgm"), original, PgmEncoding::Binary)?;

    let config = AugmentConfig::default();
    let mut r = rng::seeded(11);
    for i in 0..6 {
        let p = augment::sample_params(&mut r, &config)?;
        let img = augment::apply(original, &p);
        save_image(out.join(format!("aug_{i:03}.pgm")), &img, PgmEncoding::Binary)?;
        println!(
            "aug_{i:03}: flip {:5} scale {:.3} crop ({:+.3}, {:+.3}) shift {:+.3}",
            p.flip, p.scale, p.crop_dx, p.crop_dy, p.shift
        );
    }
    println!("images in {}", out.display());
    Ok(())
}
