//! Label-preserving augmentation and bilinear resampling.
//!
//! The augmentation pipeline is fixed: horizontal flip, rescale about the
//! image center, translation, crop/pad back to the source size with edge
//! replication, then an additive intensity (channel) shift. Nothing here
//! rotates or shears an image.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imageio::GrayImage;
use crate::rng::{self, Rng};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentConfig {
    pub rescale_min: f64,
    pub rescale_max: f64,
    /// Largest translation, as a fraction of width (x) or height (y).
    pub max_crop_frac: f64,
    pub flip_prob: f64,
    /// Largest additive intensity shift, as a fraction of `max_value`.
    pub shift_frac: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            rescale_min: 0.875,
            rescale_max: 1.125,
            max_crop_frac: 0.125,
            flip_prob: 0.5,
            shift_frac: 0.1,
        }
    }
}

impl AugmentConfig {
    /// A configuration whose every draw is the identity transform.
    pub fn identity() -> Self {
        Self {
            rescale_min: 1.0,
            rescale_max: 1.0,
            max_crop_frac: 0.0,
            flip_prob: 0.0,
            shift_frac: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.rescale_min > 0.0
            && self.rescale_min <= self.rescale_max
            && self.rescale_max.is_finite()
            && (0.0..1.0).contains(&self.max_crop_frac)
            && (0.0..=1.0).contains(&self.flip_prob)
            && (0.0..=1.0).contains(&self.shift_frac);
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid augmentation config {self:?}")))
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentParams {
    pub flip: bool,
    pub scale: f64,
    pub crop_dx: f64,
    pub crop_dy: f64,
    pub shift: f64,
}

impl AugmentParams {
    pub const IDENTITY: AugmentParams = AugmentParams {
        flip: false,
        scale: 1.0,
        crop_dx: 0.0,
        crop_dy: 0.0,
        shift: 0.0,
    };

    pub fn within(&self, config: &AugmentConfig) -> bool {
        (config.rescale_min..=config.rescale_max).contains(&self.scale)
            && self.crop_dx.abs() <= config.max_crop_frac
            && self.crop_dy.abs() <= config.max_crop_frac
            && self.shift.abs() <= config.shift_frac
    }
}

pub fn sample_params(rng: &mut Rng, config: &AugmentConfig) -> Result<AugmentParams> {
    config.validate()?;
    let flip = rng::unit(rng) < config.flip_prob;
    let scale = rng::uniform(rng, config.rescale_min, config.rescale_max);
    let c = config.max_crop_frac;
    let crop_dx = rng::uniform(rng, -c, c);
    let crop_dy = rng::uniform(rng, -c, c);
    let shift = rng::uniform(rng, -config.shift_frac, config.shift_frac);
    Ok(AugmentParams {
        flip,
        scale,
        crop_dx,
        crop_dy,
        shift,
    })
}

/// Bilinear sample at a real-valued source position, clamping to the border
/// (edge replication).
fn sample_clamped(img: &GrayImage, sx: f64, sy: f64) -> f64 {
    let w = img.width();
    let h = img.height();
    let sx = sx.clamp(0.0, (w - 1) as f64);
    let sy = sy.clamp(0.0, (h - 1) as f64);
    let x0 = sx.floor() as usize;
    let y0 = sy.floor() as usize;
    let x1 = (x0 + 1).min(w - 1);
    let y1 = (y0 + 1).min(h - 1);
    let fx = sx - x0 as f64;
    let fy = sy - y0 as f64;
    let p = |x, y| img.get(x, y) as f64;
    let top = p(x0, y0) * (1.0 - fx) + p(x1, y0) * fx;
    let bottom = p(x0, y1) * (1.0 - fx) + p(x1, y1) * fx;
    top * (1.0 - fy) + bottom * fy
}

/// Applies `params` to `img`. Resampled values are rounded to integers before
/// the intensity shift `round(shift * max_value)` is added and clamped.
pub fn apply(img: &GrayImage, params: &AugmentParams) -> GrayImage {
    let w = img.width();
    let h = img.height();
    let max = img.max_value() as f64;
    let cx = w as f64 / 2.0;
    let cy = h as f64 / 2.0;
    let tx = params.crop_dx * w as f64;
    let ty = params.crop_dy * h as f64;
    let offset = (params.shift * max).round();

    let mut pixels = Vec::with_capacity(w * h);
    for y in 0..h {
        let sy = (y as f64 + 0.5 - cy - ty) / params.scale + cy - 0.5;
        for x in 0..w {
            let mut sx = (x as f64 + 0.5 - cx - tx) / params.scale + cx - 0.5;
            if params.flip {
                sx = (w - 1) as f64 - sx;
            }
            let v = sample_clamped(img, sx, sy).round() + offset;
            pixels.push(v.clamp(0.0, max) as u16);
        }
    }
    GrayImage::new(w, h, img.max_value(), pixels).expect("dimensions preserved")
}

/// Bilinear resize with half-pixel-center alignment: output pixel `i` samples
/// source coordinate `(i + 0.5) * in / out - 0.5`, clamped to the image.
pub fn resize_bilinear(img: &GrayImage, out_w: usize, out_h: usize) -> Result<GrayImage> {
    if out_w == 0 || out_h == 0 {
        return Err(Error::InvalidArgument(format!(
            "output size must be positive, got {out_w}x{out_h}"
        )));
    }
    let sx_ratio = img.width() as f64 / out_w as f64;
    let sy_ratio = img.height() as f64 / out_h as f64;
    let xs: Vec<f64> = (0..out_w)
        .map(|i| (i as f64 + 0.5) * sx_ratio - 0.5)
        .collect();
    let mut pixels = Vec::with_capacity(out_w * out_h);
    for j in 0..out_h {
        let sy = (j as f64 + 0.5) * sy_ratio - 0.5;
        for &sx in &xs {
            pixels.push(sample_clamped(img, sx, sy).round() as u16);
        }
    }
    GrayImage::new(out_w, out_h, img.max_value(), pixels)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn img(w: usize, h: usize, px: &[u16]) -> GrayImage {
        GrayImage::new(w, h, 255, px.to_vec()).unwrap()
    }

    #[test]
    fn degenerate_config_samples_identity() {
        let mut r = rng::seeded(11);
        for _ in 0..100 {
            let p = sample_params(&mut r, &AugmentConfig::identity()).unwrap();
            assert!(!p.flip);
            assert_eq!(p.scale, 1.0);
            assert_eq!(p.crop_dx, 0.0);
            assert_eq!(p.crop_dy, 0.0);
            assert_eq!(p.shift, 0.0);
        }
    }

    #[test]
    fn default_draws_respect_bounds() {
        let cfg = AugmentConfig::default();
        let mut r = rng::seeded(5);
        let mut flips = 0;
        for _ in 0..10_000 {
            let p = sample_params(&mut r, &cfg).unwrap();
            assert!(p.within(&cfg), "{p:?}");
            flips += p.flip as usize;
        }
        assert!((4_700..5_300).contains(&flips), "{flips}");
    }

    #[test]
    fn sampling_is_reproducible() {
        let cfg = AugmentConfig::default();
        let (mut a, mut b) = (rng::seeded(8), rng::seeded(8));
        for _ in 0..20 {
            assert_eq!(
                sample_params(&mut a, &cfg).unwrap(),
                sample_params(&mut b, &cfg).unwrap()
            );
        }
    }

    #[test]
    fn invalid_config_is_rejected() {
        let cfg = AugmentConfig {
            rescale_min: 1.2,
            rescale_max: 1.0,
            ..Default::default()
        };
        assert!(sample_params(&mut rng::seeded(0), &cfg).is_err());
        let cfg = AugmentConfig {
            max_crop_frac: 1.0,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn identity_params_preserve_pixels() {
        let src = img(3, 2, &[0, 10, 20, 30, 40, 255]);
        assert_eq!(apply(&src, &AugmentParams::IDENTITY), src);
    }

    #[test]
    fn flip_mirrors_rows() {
        let p = AugmentParams {
            flip: true,
            ..AugmentParams::IDENTITY
        };
        assert_eq!(apply(&img(2, 2, &[1, 2, 3, 4]), &p).pixels(), &[2, 1, 4, 3]);
    }

    #[test]
    fn shift_clamps_at_max() {
        let p = AugmentParams {
            shift: 0.1,
            ..AugmentParams::IDENTITY
        };
        // 250 + 25.5 saturates
        assert_eq!(apply(&img(2, 1, &[250, 100]), &p).pixels(), &[255, 126]);
        let p = AugmentParams {
            shift: -0.1,
            ..AugmentParams::IDENTITY
        };
        assert_eq!(apply(&img(2, 1, &[10, 100]), &p).pixels(), &[0, 74]);
    }

    #[test]
    fn translation_replicates_edges() {
        let src = img(4, 1, &[10, 20, 30, 40]);
        let p = AugmentParams {
            crop_dx: 0.25,
            ..AugmentParams::IDENTITY
        };
        assert_eq!(apply(&src, &p).pixels(), &[10, 10, 20, 30]);
    }

    #[test]
    fn resize_constant_and_identity() {
        let c = GrayImage::filled(5, 3, 255, 77).unwrap();
        for (w, h) in [(1, 1), (7, 2), (10, 6)] {
            assert!(resize_bilinear(&c, w, h)
                .unwrap()
                .pixels()
                .iter()
                .all(|&p| p == 77));
        }
        let src = img(3, 2, &[0, 10, 20, 30, 40, 255]);
        assert_eq!(resize_bilinear(&src, 3, 2).unwrap(), src);
        assert!(resize_bilinear(&src, 0, 2).is_err());
    }

    #[test]
    fn ramp_resize_against_scalar_formula() {
        // Oracle: evaluate the alignment formula by hand for one axis.
        fn oracle(row: &[f64], out: usize) -> Vec<u16> {
            let n = row.len();
            (0..out)
                .map(|i| {
                    let s = ((i as f64 + 0.5) * n as f64 / out as f64 - 0.5)
                        .clamp(0.0, (n - 1) as f64);
                    let lo = s.floor() as usize;
                    let hi = (lo + 1).min(n - 1);
                    let f = s - lo as f64;
                    (row[lo] * (1.0 - f) + row[hi] * f).round() as u16
                })
                .collect()
        }
        let ramp = img(4, 4, &[0, 1, 2, 3, 0, 1, 2, 3, 0, 1, 2, 3, 0, 1, 2, 3]);
        let rows_halved = resize_bilinear(&ramp, 4, 2).unwrap();
        assert_eq!(rows_halved.pixels(), &[0, 1, 2, 3, 0, 1, 2, 3]);
        let cols_halved = resize_bilinear(&ramp, 2, 4).unwrap();
        let expect = oracle(&[0.0, 1.0, 2.0, 3.0], 2);
        assert_eq!(expect, vec![1, 3]);
        for row in cols_halved.rows() {
            assert_eq!(row, expect.as_slice());
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn arb_image() -> impl Strategy<Value = GrayImage> {
            (1usize..9, 1usize..9, prop_oneof![Just(255u16), Just(65535u16)]).prop_flat_map(
                |(w, h, max)| {
                    proptest::collection::vec(0..=max, w * h)
                        .prop_map(move |px| GrayImage::new(w, h, max, px).unwrap())
                },
            )
        }

        fn arb_params() -> impl Strategy<Value = AugmentParams> {
            (
                any::<bool>(),
                0.875f64..=1.125,
                -0.125f64..=0.125,
                -0.125f64..=0.125,
                -0.1f64..=0.1,
            )
                .prop_map(|(flip, scale, crop_dx, crop_dy, shift)| AugmentParams {
                    flip,
                    scale,
                    crop_dx,
                    crop_dy,
                    shift,
                })
        }

        proptest! {
            #[test]
            fn apply_keeps_dimensions_and_range(src in arb_image(), p in arb_params()) {
                let out = apply(&src, &p);
                prop_assert_eq!((out.width(), out.height()), (src.width(), src.height()));
                prop_assert!(out.pixels().iter().all(|&v| v <= src.max_value()));
            }

            #[test]
            fn flip_is_an_involution(src in arb_image()) {
                let p = AugmentParams { flip: true, ..AugmentParams::IDENTITY };
                prop_assert_eq!(apply(&apply(&src, &p), &p), src);
            }

            #[test]
            fn unclamped_shift_is_exact(src in arb_image(), s in -0.1f64..0.1) {
                let p = AugmentParams { shift: s, ..AugmentParams::IDENTITY };
                let d = (s * src.max_value() as f64).round() as i64;
                let out = apply(&src, &p);
                for (&a, &b) in src.pixels().iter().zip(out.pixels()) {
                    let want = a as i64 + d;
                    if (0..=src.max_value() as i64).contains(&want) {
                        prop_assert_eq!(b as i64, want);
                    }
                }
            }

            #[test]
            fn resize_yields_requested_size(src in arb_image(), w in 1usize..12, h in 1usize..12) {
                let out = resize_bilinear(&src, w, h).unwrap();
                prop_assert_eq!((out.width(), out.height()), (w, h));
                prop_assert!(out.pixels().iter().all(|&v| v <= src.max_value()));
            }
        }
    }
}
