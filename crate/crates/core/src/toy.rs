//! Procedural vein-like images for smoke tests and the overfit check.
//!
//! Each identity owns a fixed set of dark, gently curving lines over a
//! finger-shaped brightness profile; samples of one identity differ by a
//! small shift and tilt, a brightness offset and sensor noise.

use std::path::{Path, PathBuf};

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{io_err, Result};
use crate::image::{save_image, GrayImage};
use crate::seed;

pub const TOY_IDENTITIES: usize = 8;
pub const TOY_SAMPLES: usize = 10;
pub const TOY_WIDTH: usize = 96;
pub const TOY_HEIGHT: usize = 64;

struct Vein {
    /// Signed distance of the line from the image centre.
    offset: f64,
    angle: f64,
    amp: f64,
    freq: f64,
    phase: f64,
    half_width: f64,
    depth: f64,
}

/// Identity `k` draws its lines around orientation `k * 180 / 8` degrees,
/// with an identity-specific count and thickness, so identities differ in
/// texture as well as in layout.
fn veins(identity: usize, seed: u64) -> Vec<Vein> {
    let mut rng = seed::rng(&[seed, identity as u64, 0x7e1]);
    let base = identity as f64 * std::f64::consts::PI / TOY_IDENTITIES as f64 + rng.random_range(-0.08..0.08);
    let n = 3 + identity % 3;
    let half_width = 1.0 + 0.5 * (identity % 4) as f64;
    let spread = TOY_HEIGHT as f64 * 0.8;
    (0..n)
        .map(|i| Vein {
            offset: (i as f64 + 0.5) / n as f64 * spread - spread / 2.0 + rng.random_range(-3.0..3.0),
            angle: base + rng.random_range(-0.12..0.12),
            amp: rng.random_range(0.5..3.0),
            freq: rng.random_range(0.05..0.15),
            phase: rng.random_range(0.0..std::f64::consts::TAU),
            half_width: half_width * rng.random_range(0.85..1.15),
            depth: rng.random_range(110.0..140.0),
        })
        .collect()
}

/// Sample `sample` of `identity`.
pub fn toy_image(identity: usize, sample: usize, seed: u64) -> GrayImage {
    let lines = veins(identity, seed);
    let mut rng = seed::rng(&[seed, identity as u64, sample as u64, 0x5a3]);
    let dx = rng.random_range(-1.5..=1.5);
    let dy = rng.random_range(-1.0..=1.0);
    let tilt = rng.random_range(-0.015..=0.015);
    let offset = rng.random_range(-3.0..=3.0);
    let noise = Normal::new(0.0, 2.0).expect("positive sigma");
    let (cx, cy) = ((TOY_WIDTH as f64 - 1.0) / 2.0, (TOY_HEIGHT as f64 - 1.0) / 2.0);
    let pixels = (0..TOY_HEIGHT)
        .flat_map(|y| (0..TOY_WIDTH).map(move |x| (x, y)))
        .map(|(x, y)| {
            let (u, v) = (x as f64 - cx - dx, y as f64 - cy - dy);
            let profile = 1.0 - (v / (cy + 6.0)).powi(2);
            let mut p = 90.0 + 110.0 * profile + offset;
            for l in &lines {
                let (s, c) = (l.angle + tilt).sin_cos();
                // position along the line and signed distance across it
                let (along, across) = (u * c + v * s, -u * s + v * c);
                let d = (across - l.offset - l.amp * (l.freq * along + l.phase).sin()).abs() / l.half_width;
                p -= l.depth * (-d * d).exp();
            }
            p += noise.sample(&mut rng);
            p.round().clamp(0.0, 255.0) as u8
        })
        .collect();
    GrayImage::new(TOY_WIDTH, TOY_HEIGHT, pixels).expect("consistent extents")
}

/// Writes `root/id_XX/session_S/sample_YY.pgm`, spreading each identity's
/// samples over `sessions` equal consecutive groups. Returns the written
/// paths in canonical order.
pub fn write_toy_dataset(
    root: impl AsRef<Path>,
    identities: usize,
    samples: usize,
    sessions: usize,
    seed: u64,
) -> Result<Vec<PathBuf>> {
    let root = root.as_ref();
    let sessions = sessions.max(1);
    let per_session = samples.div_ceil(sessions);
    let mut written = Vec::with_capacity(identities * samples);
    for id in 0..identities {
        for s in 0..samples {
            let dir = root.join(format!("id_{id:02}")).join(format!("session_{}", s / per_session + 1));
            std::fs::create_dir_all(&dir).map_err(io_err(&dir))?;
            let path = dir.join(format!("sample_{s:02}.pgm"));
            save_image(&toy_image(id, s, seed), &path)?;
            written.push(path);
        }
    }
    Ok(written)
}
