//! Grayscale images, dataset manifests and train/validation/test splits.
//!
//! Images are NetPBM graymaps: `P2` (ASCII) or `P5` (binary). A `P5` payload
//! uses one byte per pixel when `max_value < 256` and two big-endian bytes
//! otherwise.
//!
//! A manifest is UTF-8 text with one `path,label` record per line and no
//! header; label `0` is normal and `1` is positive.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GrayImage {
    width: usize,
    height: usize,
    max_value: u16,
    pixels: Vec<u16>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, max_value: u16, pixels: Vec<u16>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidArgument(format!(
                "image dimensions must be positive, got {width}x{height}"
            )));
        }
        if max_value == 0 {
            return Err(Error::InvalidArgument("max_value must be positive".into()));
        }
        if pixels.len() != width * height {
            return Err(Error::InvalidArgument(format!(
                "expected {} pixels for {width}x{height}, got {}",
                width * height,
                pixels.len()
            )));
        }
        if let Some(p) = pixels.iter().find(|&&p| p > max_value) {
            return Err(Error::InvalidArgument(format!(
                "pixel value {p} exceeds max_value {max_value}"
            )));
        }
        Ok(Self {
            width,
            height,
            max_value,
            pixels,
        })
    }

    pub fn filled(width: usize, height: usize, max_value: u16, value: u16) -> Result<Self> {
        Self::new(width, height, max_value, vec![value; width * height])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn max_value(&self) -> u16 {
        self.max_value
    }

    pub fn pixels(&self) -> &[u16] {
        &self.pixels
    }

    pub fn get(&self, x: usize, y: usize) -> u16 {
        self.pixels[y * self.width + x]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[u16]> {
        self.pixels.chunks(self.width)
    }

    /// Pixel intensities scaled to `[0, 1]`.
    pub fn to_unit(&self) -> Vec<f64> {
        let scale = 1.0 / self.max_value as f64;
        self.pixels.iter().map(|&p| p as f64 * scale).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PgmEncoding {
    Ascii,
    Binary,
}

struct HeaderReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> HeaderReader<'a> {
    fn skip_space_and_comments(&mut self) {
        while self.pos < self.bytes.len() {
            let b = self.bytes[self.pos];
            if b == b'#' {
                while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                    self.pos += 1;
                }
            } else if b.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn token(&mut self) -> Option<&'a [u8]> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self.pos < self.bytes.len() && !self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        (self.pos > start).then(|| &self.bytes[start..self.pos])
    }

    fn number(&mut self, what: &str) -> std::result::Result<u64, String> {
        let tok = self.token().ok_or_else(|| format!("missing {what}"))?;
        std::str::from_utf8(tok)
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| format!("invalid {what} {:?}", String::from_utf8_lossy(tok)))
    }
}

pub fn decode_pgm(bytes: &[u8]) -> std::result::Result<GrayImage, String> {
    let mut r = HeaderReader { bytes, pos: 0 };
    let encoding = match r.token() {
        Some(b"P2") => PgmEncoding::Ascii,
        Some(b"P5") => PgmEncoding::Binary,
        Some(other) => {
            return Err(format!(
                "bad magic number {:?}, expected P2 or P5",
                String::from_utf8_lossy(other)
            ))
        }
        None => return Err("empty file".into()),
    };
    let width = r.number("width")? as usize;
    let height = r.number("height")? as usize;
    let max_value = r.number("max value")?;
    if width == 0 || height == 0 {
        return Err(format!("non-positive dimensions {width}x{height}"));
    }
    if max_value == 0 || max_value > u16::MAX as u64 {
        return Err(format!("max value {max_value} outside 1..=65535"));
    }
    let max_value = max_value as u16;
    let count = width * height;

    let pixels = match encoding {
        PgmEncoding::Ascii => {
            let mut pixels = Vec::with_capacity(count);
            while let Some(tok) = r.token() {
                let v: u64 = std::str::from_utf8(tok)
                    .ok()
                    .and_then(|s| s.parse().ok())
                    .ok_or_else(|| {
                        format!("invalid pixel value {:?}", String::from_utf8_lossy(tok))
                    })?;
                pixels.push(v);
            }
            if pixels.len() != count {
                return Err(format!(
                    "header declares {width}x{height} = {count} pixels, payload has {}",
                    pixels.len()
                ));
            }
            check_range(pixels, max_value)?
        }
        PgmEncoding::Binary => {
            // exactly one whitespace byte separates the header from the payload
            let start = r.pos + 1;
            let sample = if max_value < 256 { 1 } else { 2 };
            let payload = bytes.get(start..).unwrap_or(&[]);
            if payload.len() != count * sample {
                return Err(format!(
                    "header declares {count} pixels ({} bytes), payload has {} bytes",
                    count * sample,
                    payload.len()
                ));
            }
            let raw: Vec<u64> = if sample == 1 {
                payload.iter().map(|&b| b as u64).collect()
            } else {
                payload
                    .chunks_exact(2)
                    .map(|c| u16::from_be_bytes([c[0], c[1]]) as u64)
                    .collect()
            };
            check_range(raw, max_value)?
        }
    };
    GrayImage::new(width, height, max_value, pixels).map_err(|e| e.to_string())
}

fn check_range(values: Vec<u64>, max_value: u16) -> std::result::Result<Vec<u16>, String> {
    values
        .into_iter()
        .enumerate()
        .map(|(i, v)| {
            if v > max_value as u64 {
                Err(format!("pixel {i} value {v} exceeds max value {max_value}"))
            } else {
                Ok(v as u16)
            }
        })
        .collect()
}

pub fn encode_pgm(img: &GrayImage, encoding: PgmEncoding) -> Vec<u8> {
    match encoding {
        PgmEncoding::Ascii => {
            let mut s = format!("P2\n{} {}\n{}\n", img.width, img.height, img.max_value);
            for row in img.rows() {
                let line: Vec<String> = row.iter().map(|p| p.to_string()).collect();
                let _ = writeln!(s, "{}", line.join(" "));
            }
            s.into_bytes()
        }
        PgmEncoding::Binary => {
            let mut out =
                format!("P5\n{} {}\n{}\n", img.width, img.height, img.max_value).into_bytes();
            if img.max_value < 256 {
                out.extend(img.pixels.iter().map(|&p| p as u8));
            } else {
                for &p in &img.pixels {
                    out.extend_from_slice(&p.to_be_bytes());
                }
            }
            out
        }
    }
}

pub fn load_image(path: impl AsRef<Path>) -> Result<GrayImage> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_pgm(&bytes).map_err(|m| Error::format(path, m))
}

pub fn save_image(path: impl AsRef<Path>, img: &GrayImage, encoding: PgmEncoding) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_pgm(img, encoding)).map_err(|e| Error::io(path, e))
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: PathBuf,
    pub label: u8,
}

impl ManifestEntry {
    pub fn new(path: impl Into<PathBuf>, label: u8) -> Self {
        Self {
            path: path.into(),
            label,
        }
    }
}

pub fn parse_manifest(text: &str) -> Result<Vec<ManifestEntry>> {
    let mut entries = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let err = |message: String| Error::Manifest {
            line: idx + 1,
            message,
        };
        let (path, label) = line
            .rsplit_once(',')
            .ok_or_else(|| err(format!("expected \"path,label\", got {line:?}")))?;
        let path = path.trim();
        if path.is_empty() {
            return Err(err("empty path".into()));
        }
        let label = match label.trim() {
            "0" => 0,
            "1" => 1,
            other => return Err(err(format!("label must be 0 or 1, got {other:?}"))),
        };
        entries.push(ManifestEntry::new(path, label));
    }
    Ok(entries)
}

pub fn format_manifest(entries: &[ManifestEntry]) -> String {
    let mut s = String::new();
    for e in entries {
        let _ = writeln!(s, "{},{}", e.path.display(), e.label);
    }
    s
}

pub fn load_manifest(path: impl AsRef<Path>) -> Result<Vec<ManifestEntry>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_manifest(&text)
}

pub fn save_manifest(path: impl AsRef<Path>, entries: &[ManifestEntry]) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, format_manifest(entries)).map_err(|e| Error::io(path, e))
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train: Vec<ManifestEntry>,
    pub validation: Vec<ManifestEntry>,
    pub test: Vec<ManifestEntry>,
    pub seed: u64,
}

/// Subset sizes `(train, validation, test)` for `n` entries: test takes
/// `floor(0.2 n)`, validation `floor(0.2 (n - test))`.
pub fn split_sizes(n: usize) -> (usize, usize, usize) {
    let test = n / 5;
    let validation = (n - test) / 5;
    (n - test - validation, validation, test)
}

/// Stratified 64/16/20 split. Per-class counts in every subset are within one
/// item of exact proportionality.
pub fn split_dataset(entries: &[ManifestEntry], seed: u64) -> Result<DatasetSplit> {
    if entries.len() < 5 {
        return Err(Error::InvalidArgument(format!(
            "need at least 5 entries to split, got {}",
            entries.len()
        )));
    }
    let mut by_class: [Vec<ManifestEntry>; 2] = [Vec::new(), Vec::new()];
    for e in entries {
        by_class[e.label as usize].push(e.clone());
    }
    if let Some(k) = by_class.iter().position(|c| c.is_empty()) {
        return Err(Error::InvalidArgument(format!(
            "class {k} has no members; cannot stratify"
        )));
    }

    let n = entries.len();
    let (train_n, val_n, test_n) = split_sizes(n);
    let alloc = allocate(
        [by_class[0].len(), by_class[1].len()],
        [test_n, val_n, train_n],
    );

    let mut rng = rng::seeded(seed);
    let mut subsets: [Vec<ManifestEntry>; 3] = Default::default();
    for (class, members) in by_class.iter_mut().enumerate() {
        rng::shuffle(&mut rng, members);
        let mut rest = members.as_slice();
        for (s, subset) in subsets.iter_mut().enumerate() {
            let (take, tail) = rest.split_at(alloc[class][s]);
            subset.extend_from_slice(take);
            rest = tail;
        }
    }
    for subset in subsets.iter_mut() {
        rng::shuffle(&mut rng, subset);
    }
    let [test, validation, train] = subsets;
    Ok(DatasetSplit {
        train,
        validation,
        test,
        seed,
    })
}

/// Integer class-by-subset counts with the given margins, each within one of
/// `subset_size * class_size / n`. Among the valid roundings of the floors,
/// the one with the smallest total deviation wins (first in bit order on ties).
fn allocate(class_sizes: [usize; 2], subset_sizes: [usize; 3]) -> [[usize; 3]; 2] {
    let n: usize = class_sizes.iter().sum();
    let target = |k: usize, s: usize| subset_sizes[s] as f64 * class_sizes[k] as f64 / n as f64;
    let floor = |k: usize, s: usize| subset_sizes[s] * class_sizes[k] / n;

    let mut best: Option<([[usize; 3]; 2], f64)> = None;
    for mask in 0u32..64 {
        let mut m = [[0usize; 3]; 2];
        for (k, row) in m.iter_mut().enumerate() {
            for (s, cell) in row.iter_mut().enumerate() {
                *cell = floor(k, s) + ((mask >> (k * 3 + s)) & 1) as usize;
            }
        }
        let rows_ok = (0..2).all(|k| m[k].iter().sum::<usize>() == class_sizes[k]);
        let cols_ok = (0..3).all(|s| m[0][s] + m[1][s] == subset_sizes[s]);
        if !(rows_ok && cols_ok) {
            continue;
        }
        let dev: f64 = (0..2)
            .flat_map(|k| (0..3).map(move |s| (k, s)))
            .map(|(k, s)| (m[k][s] as f64 - target(k, s)).abs())
            .sum();
        if best.as_ref().is_none_or(|(_, d)| dev < *d - 1e-12) {
            best = Some((m, dev));
        }
    }
    best.expect("a proportional rounding always exists").0
}

pub const SPLIT_FILES: [&str; 3] = ["train.csv", "validation.csv", "test.csv"];
pub const SPLIT_SIDECAR: &str = "split.txt";

impl DatasetSplit {
    pub fn subsets(&self) -> [&[ManifestEntry]; 3] {
        [&self.train, &self.validation, &self.test]
    }

    pub fn len(&self) -> usize {
        self.train.len() + self.validation.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Writes `train.csv`, `validation.csv`, `test.csv` and the `split.txt`
    /// sidecar into `dir`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (name, subset) in SPLIT_FILES.iter().zip(self.subsets()) {
            save_manifest(dir.join(name), subset)?;
        }
        let count = |s: &[ManifestEntry], label: u8| s.iter().filter(|e| e.label == label).count();
        let mut side = format!("seed={}\n", self.seed);
        for (name, subset) in ["train", "validation", "test"].iter().zip(self.subsets()) {
            let _ = writeln!(
                side,
                "{name}={} negative={} positive={}",
                subset.len(),
                count(subset, 0),
                count(subset, 1)
            );
        }
        let path = dir.join(SPLIT_SIDECAR);
        fs::write(&path, side).map_err(|e| Error::io(path, e))
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let side_path = dir.join(SPLIT_SIDECAR);
        if !side_path.exists() {
            return Err(Error::MissingArtifact(side_path));
        }
        let side = fs::read_to_string(&side_path).map_err(|e| Error::io(&side_path, e))?;
        let seed = side
            .lines()
            .find_map(|l| l.strip_prefix("seed="))
            .and_then(|s| s.trim().parse().ok())
            .ok_or_else(|| Error::format(&side_path, "missing seed= line"))?;
        let train = load_manifest(dir.join(SPLIT_FILES[0]))?;
        let validation = load_manifest(dir.join(SPLIT_FILES[1]))?;
        let test = load_manifest(dir.join(SPLIT_FILES[2]))?;
        Ok(Self {
            train,
            validation,
            test,
            seed,
        })
    }
}
