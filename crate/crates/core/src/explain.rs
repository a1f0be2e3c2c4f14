//! Perturbation-based local explanations on a rectangular grid.
//!
//! Random subsets of grid cells are replaced by the image mean, each
//! perturbed image is scored, and a locally weighted ridge regression of
//! the scores on the keep/mask indicators gives every cell an importance.

use std::io::Write;
use std::path::Path;

use rand::Rng;
use rayon::prelude::*;

use crate::error::{io_err, Error, Result};
use crate::image::{save_image, GrayImage};
use crate::seed;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ExplainParams {
    pub grid: (usize, usize),
    pub samples: usize,
    pub kernel_width: f64,
    pub ridge_lambda: f64,
    pub seed: u64,
}

impl Default for ExplainParams {
    fn default() -> Self {
        Self { grid: (8, 8), samples: 256, kernel_width: 0.25, ridge_lambda: 1e-3, seed: 0 }
    }
}

/// Per-pixel cell indices of a `gx` by `gy` grid, row-major over cells.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Segmentation {
    pub grid: (usize, usize),
    pub width: usize,
    pub height: usize,
    pub cells: Vec<usize>,
}

impl Segmentation {
    pub fn num_cells(&self) -> usize {
        self.grid.0 * self.grid.1
    }
}

/// Column `x` belongs to cell column `floor(x * gx / width)`, likewise for rows.
pub fn grid_segments(img: &GrayImage, gx: usize, gy: usize) -> Result<Segmentation> {
    let (w, h) = (img.width(), img.height());
    if gx == 0 || gy == 0 || gx > w || gy > h {
        return Err(Error::InvalidArgument(format!("grid {gx}x{gy} does not fit a {w}x{h} image")));
    }
    let cells = (0..h).flat_map(|y| (0..w).map(move |x| (y * gy / h) * gx + x * gx / w)).collect();
    Ok(Segmentation { grid: (gx, gy), width: w, height: h, cells })
}

/// Binary keep-masks, one row per sample. Row 0 keeps every cell, row 1
/// masks every cell, the remaining rows keep each cell with probability 1/2.
pub fn sample_masks(cells: usize, samples: usize, seed: u64) -> Result<Vec<Vec<bool>>> {
    if samples < cells.max(2) {
        return Err(Error::InvalidArgument(format!("{samples} samples for {cells} cells; need at least as many")));
    }
    let mut rng = seed::rng(&[seed, 0x11e]);
    let mut masks = vec![vec![true; cells], vec![false; cells]];
    masks.extend((2..samples).map(|_| (0..cells).map(|_| rng.random_bool(0.5)).collect()));
    Ok(masks)
}

/// `img` with every masked cell set to the rounded whole-image mean.
pub fn apply_mask(img: &GrayImage, seg: &Segmentation, keep: &[bool]) -> GrayImage {
    let fill = img.mean().round() as u8;
    let pixels = img.pixels().iter().zip(&seg.cells).map(|(&p, &c)| if keep[c] { p } else { fill }).collect();
    GrayImage::new(img.width(), img.height(), pixels).expect("same extents")
}

/// Masks and their scores under `score`, computed in parallel on the
/// current rayon pool.
pub fn perturb_and_score(
    img: &GrayImage,
    seg: &Segmentation,
    samples: usize,
    seed: u64,
    score: impl Fn(&GrayImage) -> Result<f64> + Sync,
) -> Result<(Vec<Vec<bool>>, Vec<f64>)> {
    if (seg.width, seg.height) != (img.width(), img.height()) {
        return Err(Error::InvalidArgument("segmentation does not match the image".into()));
    }
    let masks = sample_masks(seg.num_cells(), samples, seed)?;
    let scores = masks.par_iter().map(|m| score(&apply_mask(img, seg, m))).collect::<Result<Vec<_>>>()?;
    Ok((masks, scores))
}

/// Proximity of a mask to the unperturbed image:
/// `exp(-(1 - cos)^2 / width^2)` with `cos` the cosine similarity between
/// the mask and the all-ones vector.
pub fn sample_weight(keep: &[bool], kernel_width: f64) -> f64 {
    let kept = keep.iter().filter(|&&k| k).count() as f64;
    let cos = (kept / keep.len() as f64).sqrt();
    (-(1.0 - cos).powi(2) / (kernel_width * kernel_width)).exp()
}

/// Coefficients `b` minimizing `sum_i w_i (y_i - c - x_i.b)^2 + lambda |b|^2`
/// with a free intercept `c`. The data are centred with the weighted means
/// and the normal equations solved by Cholesky factorization.
pub fn weighted_ridge(x: &[Vec<f64>], y: &[f64], w: &[f64], lambda: f64) -> Result<Vec<f64>> {
    if !(lambda > 0.0) {
        return Err(Error::InvalidArgument(format!("ridge lambda must be positive, got {lambda}")));
    }
    let n = x.len();
    if n == 0 || y.len() != n || w.len() != n {
        return Err(Error::InvalidArgument("design, target and weight lengths differ".into()));
    }
    let d = x[0].len();
    if x.iter().any(|r| r.len() != d) {
        return Err(Error::InvalidArgument("ragged design matrix".into()));
    }
    let wsum: f64 = w.iter().sum();
    if !(wsum > 0.0) {
        return Err(Error::InvalidArgument("sample weights sum to zero".into()));
    }
    let xm: Vec<f64> = (0..d).map(|j| x.iter().zip(w).map(|(r, &wi)| wi * r[j]).sum::<f64>() / wsum).collect();
    let ym = y.iter().zip(w).map(|(&v, &wi)| wi * v).sum::<f64>() / wsum;

    let mut a = vec![0.0; d * d];
    let mut b = vec![0.0; d];
    for ((row, &yi), &wi) in x.iter().zip(y).zip(w) {
        let xc: Vec<f64> = row.iter().zip(&xm).map(|(v, m)| v - m).collect();
        let yc = yi - ym;
        for j in 0..d {
            b[j] += wi * xc[j] * yc;
            for k in 0..=j {
                a[j * d + k] += wi * xc[j] * xc[k];
            }
        }
    }
    for j in 0..d {
        a[j * d + j] += lambda;
    }
    cholesky_solve(&mut a, &mut b, d)?;
    Ok(b)
}

/// Solves `A z = b` for symmetric positive definite `A`, given by its lower
/// triangle; `b` is overwritten with `z`.
fn cholesky_solve(a: &mut [f64], b: &mut [f64], d: usize) -> Result<()> {
    for j in 0..d {
        let mut diag = a[j * d + j];
        for k in 0..j {
            diag -= a[j * d + k] * a[j * d + k];
        }
        if !(diag > 0.0) {
            return Err(Error::InvalidArgument("normal equations are not positive definite".into()));
        }
        let diag = diag.sqrt();
        a[j * d + j] = diag;
        for i in j + 1..d {
            let mut v = a[i * d + j];
            for k in 0..j {
                v -= a[i * d + k] * a[j * d + k];
            }
            a[i * d + j] = v / diag;
        }
    }
    for i in 0..d {
        let s: f64 = (0..i).map(|k| a[i * d + k] * b[k]).sum();
        b[i] = (b[i] - s) / a[i * d + i];
    }
    for i in (0..d).rev() {
        let s: f64 = (i + 1..d).map(|k| a[k * d + i] * b[k]).sum();
        b[i] = (b[i] - s) / a[i * d + i];
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct SaliencyMap {
    pub grid: (usize, usize),
    /// Row-major over cells: index `cy * gx + cx`.
    pub weights: Vec<f64>,
}

impl SaliencyMap {
    pub fn weight(&self, cx: usize, cy: usize) -> f64 {
        self.weights[cy * self.grid.0 + cx]
    }

    /// Cell with the largest absolute weight; the first one on ties.
    pub fn top_cell(&self) -> usize {
        (0..self.weights.len()).fold(0, |best, i| if self.weights[i].abs() > self.weights[best].abs() { i } else { best })
    }
}

pub fn fit_local_linear(
    masks: &[Vec<bool>],
    scores: &[f64],
    grid: (usize, usize),
    kernel_width: f64,
    ridge_lambda: f64,
) -> Result<SaliencyMap> {
    if masks.iter().any(|m| m.len() != grid.0 * grid.1) {
        return Err(Error::InvalidArgument("mask length differs from the grid cell count".into()));
    }
    let x: Vec<Vec<f64>> = masks.iter().map(|m| m.iter().map(|&k| if k { 1.0 } else { 0.0 }).collect()).collect();
    let w: Vec<f64> = masks.iter().map(|m| sample_weight(m, kernel_width)).collect();
    let weights = weighted_ridge(&x, scores, &w, ridge_lambda)?;
    if weights.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("non-finite saliency weight".into()));
    }
    Ok(SaliencyMap { grid, weights })
}

/// Perturbs `img`, scores every sample with `score` and fits the map.
pub fn explain(
    img: &GrayImage,
    params: &ExplainParams,
    score: impl Fn(&GrayImage) -> Result<f64> + Sync,
) -> Result<SaliencyMap> {
    let seg = grid_segments(img, params.grid.0, params.grid.1)?;
    let (masks, scores) = perturb_and_score(img, &seg, params.samples, params.seed, score)?;
    fit_local_linear(&masks, &scores, params.grid, params.kernel_width, params.ridge_lambda)
}

/// Cells among the top `fraction` of positive weights, strongest first.
pub fn top_cells(map: &SaliencyMap, fraction: f64) -> Vec<usize> {
    let k = (map.weights.len() as f64 * fraction).ceil() as usize;
    let mut idx: Vec<usize> = (0..map.weights.len()).filter(|&i| map.weights[i] > 0.0).collect();
    idx.sort_by(|&a, &b| map.weights[b].total_cmp(&map.weights[a]).then(a.cmp(&b)));
    idx.truncate(k);
    idx
}

/// The image at half intensity with the selected cells lifted into the
/// upper half of the range.
pub fn overlay(img: &GrayImage, seg: &Segmentation, selected: &[usize]) -> GrayImage {
    let mut on = vec![false; seg.num_cells()];
    selected.iter().for_each(|&c| on[c] = true);
    let pixels = img.pixels().iter().zip(&seg.cells).map(|(&p, &c)| p / 2 + if on[c] { 128 } else { 0 }).collect();
    GrayImage::new(img.width(), img.height(), pixels).expect("same extents")
}

pub fn saliency_csv(map: &SaliencyMap) -> String {
    let mut out = String::from("cell_x,cell_y,weight\n");
    for cy in 0..map.grid.1 {
        for cx in 0..map.grid.0 {
            out.push_str(&format!("{cx},{cy},{}\n", map.weight(cx, cy)));
        }
    }
    out
}

/// Writes `<prefix>_overlay.png` and `<prefix>_weights.csv`, returning both
/// paths.
pub fn export_saliency(
    map: &SaliencyMap,
    img: &GrayImage,
    top_fraction: f64,
    prefix: &Path,
) -> Result<[std::path::PathBuf; 2]> {
    let seg = grid_segments(img, map.grid.0, map.grid.1)?;
    let name = prefix.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let with = |suffix: &str| prefix.with_file_name(format!("{name}{suffix}"));
    let (png, csv) = (with("_overlay.png"), with("_weights.csv"));
    save_image(&overlay(img, &seg, &top_cells(map, top_fraction)), &png)?;
    let mut f = std::fs::File::create(&csv).map_err(io_err(&csv))?;
    f.write_all(saliency_csv(map).as_bytes()).map_err(io_err(&csv))?;
    Ok([png, csv])
}
