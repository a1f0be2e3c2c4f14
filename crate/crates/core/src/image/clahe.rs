//! Contrast-limited adaptive histogram equalization.
//!
//! The image is split into `tiles.0 x tiles.1` tiles of `ceil(W/tx) x
//! ceil(H/ty)` pixels. Where that overhangs the image the tile reads a
//! mirrored (reflect-101) continuation, so every tile histogram has the same
//! pixel count. Each histogram is clipped at
//! `max(1, floor(clip * tile_pixels / 256))`; the clipped excess is added
//! evenly to all bins once and the remainder goes one count per bin at a
//! fixed stride. The tile maps `round(255 * cdf / tile_pixels)` are blended
//! bilinearly between tile centres, clamped at the border tiles.

use serde::{Deserialize, Serialize};

use super::GrayImage;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClaheParams {
    pub tiles: (usize, usize),
    pub clip: f64,
}

impl Default for ClaheParams {
    fn default() -> Self {
        Self { tiles: (8, 8), clip: 2.0 }
    }
}

fn reflect101(i: usize, n: usize) -> usize {
    if i < n {
        i
    } else {
        2 * (n - 1) - i
    }
}

pub fn clahe(img: &GrayImage, params: ClaheParams) -> Result<GrayImage> {
    let (tx, ty) = params.tiles;
    let (w, h) = (img.width(), img.height());
    if tx == 0 || ty == 0 {
        return Err(Error::InvalidArgument(format!("CLAHE tile grid must be at least 1x1, got {tx}x{ty}")));
    }
    if !(params.clip > 0.0) {
        return Err(Error::InvalidArgument(format!("CLAHE clip limit must be positive, got {}", params.clip)));
    }
    if w < tx || h < ty {
        return Err(Error::InvalidArgument(format!(
            "{w}x{h} image is smaller than one pixel per tile for a {tx}x{ty} grid"
        )));
    }
    let (tw, th) = (w.div_ceil(tx), h.div_ceil(ty));
    let tile_px = tw * th;
    let limit = if params.clip.is_finite() {
        ((params.clip * tile_px as f64 / 256.0) as usize).max(1)
    } else {
        usize::MAX
    };

    let mut luts = vec![[0u8; 256]; tx * ty];
    for ti in 0..ty {
        for tj in 0..tx {
            let mut hist = [0usize; 256];
            for y in ti * th..(ti + 1) * th {
                let row = reflect101(y, h) * w;
                for x in tj * tw..(tj + 1) * tw {
                    hist[img.pixels()[row + reflect101(x, w)] as usize] += 1;
                }
            }
            if limit < tile_px {
                clip_histogram(&mut hist, limit);
            }
            let mut cdf = 0;
            for (v, slot) in luts[ti * tx + tj].iter_mut().enumerate() {
                cdf += hist[v];
                // round(255 * cdf / n) in integers, halves rounding up
                *slot = ((510 * cdf + tile_px) / (2 * tile_px)).min(255) as u8;
            }
        }
    }

    // tile index pair and weight of the second tile along one axis
    let axis = |pos: usize, size: usize, count: usize| {
        let f = (pos as f64 + 0.5) / size as f64 - 0.5;
        let lo = f.floor();
        let a = f - lo;
        let lo = lo as isize;
        let clamp = |i: isize| i.clamp(0, count as isize - 1) as usize;
        (clamp(lo), clamp(lo + 1), a)
    };
    let cols: Vec<_> = (0..w).map(|x| axis(x, tw, tx)).collect();
    let mut out = Vec::with_capacity(w * h);
    for y in 0..h {
        let (r0, r1, ya) = axis(y, th, ty);
        for (x, &(c0, c1, xa)) in cols.iter().enumerate() {
            let v = img.pixels()[y * w + x] as usize;
            let m = |r: usize, c: usize| luts[r * tx + c][v] as f64;
            let top = m(r0, c0) * (1.0 - xa) + m(r0, c1) * xa;
            let bottom = m(r1, c0) * (1.0 - xa) + m(r1, c1) * xa;
            out.push((top * (1.0 - ya) + bottom * ya).round().clamp(0.0, 255.0) as u8);
        }
    }
    GrayImage::new(w, h, out)
}

fn clip_histogram(hist: &mut [usize; 256], limit: usize) {
    let mut excess = 0;
    for bin in hist.iter_mut() {
        if *bin > limit {
            excess += *bin - limit;
            *bin = limit;
        }
    }
    let even = excess / 256;
    let mut remainder = excess % 256;
    for bin in hist.iter_mut() {
        *bin += even;
    }
    if let Some(stride) = 256usize.checked_div(remainder) {
        let stride = stride.max(1);
        let mut i = 0;
        while i < 256 && remainder > 0 {
            hist[i] += 1;
            remainder -= 1;
            i += stride;
        }
    }
}
