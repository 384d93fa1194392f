//! Deterministic synthetic graymaps with a scale-sensitive positive signal.
//!
//! Negatives are a sum of smooth value-noise textures at several spatial
//! frequencies plus Gaussian pixel noise. Positives add one low-contrast
//! elliptical blob whose radius is drawn from a range wide enough that heavy
//! downsampling erases the small blobs but keeps the large ones.

use std::fs;
use std::path::Path;

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imageio::{self, GrayImage, ManifestEntry, PgmEncoding};
use crate::rng::{self, Rng};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n_negative: usize,
    pub n_positive: usize,
    pub image_size: usize,
    /// Inclusive range of the blob's major semi-axis, in pixels.
    pub blob_radius_range: [f64; 2],
    /// Blob intensity offset as a fraction of full scale.
    pub blob_contrast: f64,
    /// Standard deviation of per-pixel noise as a fraction of full scale.
    pub noise_sigma: f64,
    /// Texture grid resolutions (cells across the image).
    pub texture_scales: Vec<usize>,
    /// Peak texture deviation from mid-gray as a fraction of full scale.
    pub texture_amplitude: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_negative: 200,
            n_positive: 200,
            image_size: 128,
            blob_radius_range: [2.0, 10.0],
            blob_contrast: 0.2,
            noise_sigma: 0.04,
            texture_scales: vec![2, 4, 8],
            texture_amplitude: 0.15,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let [rmin, rmax] = self.blob_radius_range;
        let half = self.image_size as f64 / 2.0;
        let ok = self.n_negative >= 1
            && self.n_positive >= 1
            && self.image_size >= 8
            && rmin >= 1.0
            && rmin <= rmax
            && rmax < half - 1.0
            && (0.0..=1.0).contains(&self.blob_contrast)
            && (0.0..=1.0).contains(&self.noise_sigma)
            && (0.0..=0.5).contains(&self.texture_amplitude)
            && self.texture_scales.iter().all(|&s| s >= 1);
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid synthetic data config {self:?}")))
        }
    }
}

/// Ellipse with semi-axes `(radius, radius · aspect)` rotated by `angle`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Blob {
    pub cx: f64,
    pub cy: f64,
    pub radius: f64,
    pub aspect: f64,
    pub angle: f64,
}

impl Blob {
    pub fn contains(&self, x: f64, y: f64) -> bool {
        let (dx, dy) = (x - self.cx, y - self.cy);
        let (s, c) = self.angle.sin_cos();
        let u = (dx * c + dy * s) / self.radius;
        let v = (-dx * s + dy * c) / (self.radius * self.aspect);
        u * u + v * v <= 1.0
    }

    /// Adds `contrast` to every pixel whose center lies inside the ellipse.
    pub fn draw(&self, canvas: &mut [f64], size: usize, contrast: f64) {
        let lo = |c: f64| (c - self.radius).floor().max(0.0) as usize;
        let hi = |c: f64| ((c + self.radius).ceil() as usize).min(size - 1);
        for y in lo(self.cy)..=hi(self.cy) {
            for x in lo(self.cx)..=hi(self.cx) {
                if self.contains(x as f64 + 0.5, y as f64 + 0.5) {
                    canvas[y * size + x] += contrast;
                }
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthDataset {
    pub images: Vec<GrayImage>,
    pub labels: Vec<u8>,
    /// The blob drawn into each positive image.
    pub blobs: Vec<Option<Blob>>,
}

fn normal(rng: &mut Rng) -> f64 {
    <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng)
}

/// Value noise on a `(cells+1)²` lattice, interpolated with smoothstep
/// weights; values in `[-1, 1]`.
fn add_texture(canvas: &mut [f64], size: usize, cells: usize, weight: f64, rng: &mut Rng) {
    let n = cells + 1;
    let lattice: Vec<f64> = (0..n * n).map(|_| rng::uniform(rng, -1.0, 1.0)).collect();
    let smooth = |t: f64| t * t * (3.0 - 2.0 * t);
    let step = cells as f64 / size as f64;
    for y in 0..size {
        let gy = (y as f64 + 0.5) * step;
        let y0 = (gy.floor() as usize).min(cells - 1);
        let fy = smooth(gy - y0 as f64);
        for x in 0..size {
            let gx = (x as f64 + 0.5) * step;
            let x0 = (gx.floor() as usize).min(cells - 1);
            let fx = smooth(gx - x0 as f64);
            let at = |i: usize, j: usize| lattice[j * n + i];
            let top = at(x0, y0) * (1.0 - fx) + at(x0 + 1, y0) * fx;
            let bottom = at(x0, y0 + 1) * (1.0 - fx) + at(x0 + 1, y0 + 1) * fx;
            canvas[y * size + x] += weight * (top * (1.0 - fy) + bottom * fy);
        }
    }
}

fn render(config: &SynthConfig, blob: Option<&Blob>, rng: &mut Rng) -> GrayImage {
    let size = config.image_size;
    let mut canvas = vec![0.5; size * size];
    if !config.texture_scales.is_empty() {
        let w = config.texture_amplitude / config.texture_scales.len() as f64;
        for &cells in &config.texture_scales {
            add_texture(&mut canvas, size, cells, w, rng);
        }
    }
    if let Some(b) = blob {
        b.draw(&mut canvas, size, config.blob_contrast);
    }
    let max = 255.0;
    let pixels = canvas
        .iter()
        .map(|&v| {
            let v = v + config.noise_sigma * normal(rng);
            (v * max).round().clamp(0.0, max) as u16
        })
        .collect();
    GrayImage::new(size, size, 255, pixels).expect("valid synthetic image")
}

fn sample_blob(config: &SynthConfig, rng: &mut Rng) -> Blob {
    let [rmin, rmax] = config.blob_radius_range;
    let radius = rng::uniform(rng, rmin, rmax);
    let margin = radius + 1.0;
    let size = config.image_size as f64;
    Blob {
        cx: rng::uniform(rng, margin, size - margin),
        cy: rng::uniform(rng, margin, size - margin),
        radius,
        aspect: rng::uniform(rng, 0.6, 1.0),
        angle: rng::uniform(rng, 0.0, std::f64::consts::PI),
    }
}

/// Generates `n_negative + n_positive` images in a seeded random order. Each
/// image draws from its own generator (derived from `seed` and its index).
pub fn generate(config: &SynthConfig, seed: u64) -> Result<SynthDataset> {
    config.validate()?;
    let mut labels: Vec<u8> = std::iter::repeat_n(0, config.n_negative)
        .chain(std::iter::repeat_n(1, config.n_positive))
        .collect();
    rng::shuffle(&mut rng::seeded(rng::derive_seed(seed, "labels")), &mut labels);

    let mut images = Vec::with_capacity(labels.len());
    let mut blobs = Vec::with_capacity(labels.len());
    for (i, &label) in labels.iter().enumerate() {
        let mut r = rng::seeded(rng::derive_seed(seed, &format!("image/{i}")));
        let blob = (label == 1).then(|| sample_blob(config, &mut r));
        images.push(render(config, blob.as_ref(), &mut r));
        blobs.push(blob);
    }
    Ok(SynthDataset {
        images,
        labels,
        blobs,
    })
}

pub const MANIFEST_NAME: &str = "manifest.csv";

/// Writes `img_NNNNN.pgm` files (binary PGM) and `manifest.csv` into `dir`;
/// manifest paths are relative to `dir`.
pub fn write_dataset(dir: impl AsRef<Path>, data: &SynthDataset) -> Result<Vec<ManifestEntry>> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut entries = Vec::with_capacity(data.images.len());
    for (i, (img, &label)) in data.images.iter().zip(&data.labels).enumerate() {
        let name = format!("img_{i:05}.pgm");
        imageio::save_image(dir.join(&name), img, PgmEncoding::Binary)?;
        entries.push(ManifestEntry::new(name, label));
    }
    imageio::save_manifest(dir.join(MANIFEST_NAME), &entries)?;
    Ok(entries)
}
