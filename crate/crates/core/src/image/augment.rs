//! The nine training augmentations. Variant `i` draws from its own stream
//! seeded by `(seed, i)`, so a single variant can be produced without the
//! others and parallel callers cannot perturb one another.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::transform::warp;
use super::GrayImage;
use crate::seed;

pub const AUGMENT_VARIANTS: usize = 9;
pub const NOISE_SIGMAS: [f64; 3] = [2.0, 5.0, 10.0];

const MAX_SHIFT: f64 = 0.10;
const MAX_DEGREES: f64 = 10.0;
const MIN_DEGREES: f64 = 1.0;
const SCALE_RANGE: (f64, f64) = (0.9, 1.1);

/// All nine variants in order: horizontal flip, vertical flip, translation,
/// rotation, rotation of the opposite sign, isotropic scaling, and additive
/// Gaussian noise at each of [`NOISE_SIGMAS`].
pub fn augment(img: &GrayImage, seed: u64) -> Vec<GrayImage> {
    (0..AUGMENT_VARIANTS).map(|i| augment_variant(img, seed, i)).collect()
}

pub fn augment_variant(img: &GrayImage, seed: u64, which: usize) -> GrayImage {
    let mut rng = seed::rng(&[seed, which as u64]);
    let (cx, cy) = ((img.width() as f64 - 1.0) / 2.0, (img.height() as f64 - 1.0) / 2.0);
    match which {
        0 => img.hflip(),
        1 => img.vflip(),
        2 => {
            let dx = (rng.random_range(-MAX_SHIFT..=MAX_SHIFT) * img.width() as f64).round();
            let dy = (rng.random_range(-MAX_SHIFT..=MAX_SHIFT) * img.height() as f64).round();
            warp(img, |x, y| (x - dx, y - dy))
        }
        3 | 4 => {
            // both rotations share one draw of the sign; variant 4 flips it
            let mut sign_rng = seed::rng(&[seed, 3]);
            let sign = if sign_rng.random_bool(0.5) { 1.0 } else { -1.0 };
            let sign = if which == 3 { sign } else { -sign };
            let deg = sign * rng.random_range(MIN_DEGREES..=MAX_DEGREES);
            let (s, c) = deg.to_radians().sin_cos();
            warp(img, |x, y| {
                let (u, v) = (x - cx, y - cy);
                (c * u + s * v + cx, -s * u + c * v + cy)
            })
        }
        5 => {
            let f = rng.random_range(SCALE_RANGE.0..=SCALE_RANGE.1);
            warp(img, |x, y| ((x - cx) / f + cx, (y - cy) / f + cy))
        }
        6..=8 => {
            let noise = Normal::new(0.0, NOISE_SIGMAS[which - 6]).expect("positive sigma");
            let pixels = img
                .pixels()
                .iter()
                .map(|&p| (p as f64 + noise.sample(&mut rng)).round().clamp(0.0, 255.0) as u8)
                .collect();
            GrayImage::new(img.width(), img.height(), pixels).expect("same extents")
        }
        _ => panic!("augmentation variant {which} out of range 0..{AUGMENT_VARIANTS}"),
    }
}
