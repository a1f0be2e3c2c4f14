use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use veinatn::explain::{explain, grid_segments, sample_masks, weighted_ridge, ExplainParams};
use veinatn::image::GrayImage;

/// Inverse of a dense matrix by Gauss-Jordan elimination with partial pivoting.
fn invert(mut a: Vec<Vec<f64>>) -> Vec<Vec<f64>> {
    let n = a.len();
    let mut inv: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| f64::from(i == j)).collect()).collect();
    for col in 0..n {
        let piv = (col..n).max_by(|&r, &s| a[r][col].abs().total_cmp(&a[s][col].abs())).unwrap();
        a.swap(col, piv);
        inv.swap(col, piv);
        let p = a[col][col];
        for j in 0..n {
            a[col][j] /= p;
            inv[col][j] /= p;
        }
        for r in 0..n {
            if r != col {
                let f = a[r][col];
                for j in 0..n {
                    a[r][j] -= f * a[col][j];
                    inv[r][j] -= f * inv[col][j];
                }
            }
        }
    }
    inv
}

/// Weighted ridge with an unpenalized intercept, solved on the augmented
/// design `[1 | X]` through an explicit inverse.
fn ridge_oracle(x: &[Vec<f64>], y: &[f64], w: &[f64], lambda: f64) -> Vec<f64> {
    let d = x[0].len() + 1;
    let z: Vec<Vec<f64>> = x.iter().map(|r| std::iter::once(1.0).chain(r.iter().copied()).collect()).collect();
    let mut a = vec![vec![0.0; d]; d];
    let mut b = vec![0.0; d];
    for ((zi, &yi), &wi) in z.iter().zip(y).zip(w) {
        for j in 0..d {
            b[j] += wi * zi[j] * yi;
            for k in 0..d {
                a[j][k] += wi * zi[j] * zi[k];
            }
        }
    }
    for (j, row) in a.iter_mut().enumerate().skip(1) {
        row[j] += lambda;
    }
    let inv = invert(a);
    (1..d).map(|j| (0..d).map(|k| inv[j][k] * b[k]).sum()).collect()
}

#[test]
fn ridge_solve_matches_dense_inverse() {
    for seed in 0..10 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x: Vec<Vec<f64>> = (0..64).map(|_| (0..16).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let y: Vec<f64> = (0..64).map(|_| rng.random_range(-2.0..2.0)).collect();
        let w: Vec<f64> = (0..64).map(|_| rng.random_range(0.05..1.0)).collect();
        for lambda in [1e-3, 0.1, 1.0] {
            let got = weighted_ridge(&x, &y, &w, lambda).unwrap();
            let want = ridge_oracle(&x, &y, &w, lambda);
            for (g, e) in got.iter().zip(&want) {
                assert!((g - e).abs() < 1e-8, "seed {seed} lambda {lambda}: {g} vs {e}");
            }
        }
    }
}

#[test]
fn ridge_on_binary_masks_matches_dense_inverse() {
    let masks = sample_masks(16, 64, 3).unwrap();
    let x: Vec<Vec<f64>> = masks.iter().map(|m| m.iter().map(|&k| f64::from(u8::from(k))).collect()).collect();
    let y: Vec<f64> = x.iter().map(|r| r.iter().enumerate().map(|(j, v)| v * j as f64 * 0.1).sum()).collect();
    let w = vec![1.0; 64];
    let got = weighted_ridge(&x, &y, &w, 1e-3).unwrap();
    let want = ridge_oracle(&x, &y, &w, 1e-3);
    for (g, e) in got.iter().zip(&want) {
        assert!((g - e).abs() < 1e-8);
    }
}

#[test]
fn planted_cell_has_the_top_weight_for_20_seeds() {
    let (w, h) = (64, 48);
    let params = ExplainParams::default();
    let cells = params.grid.0 * params.grid.1;
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k = rng.random_range(0..cells);
        let base = GrayImage::from_fn(w, h, |_, _| rng.random_range(0..100)).unwrap();
        let seg = grid_segments(&base, params.grid.0, params.grid.1).unwrap();
        let img = GrayImage::new(
            w,
            h,
            base.pixels().iter().zip(&seg.cells).map(|(&p, &c)| if c == k { 255 } else { p }).collect(),
        )
        .unwrap();
        let probe = seg.cells.iter().position(|&c| c == k).unwrap();
        let score = |m: &GrayImage| Ok(if m.pixels()[probe] == 255 { 0.7 } else { 0.0 });
        let map = explain(&img, &ExplainParams { seed, ..params }, score).unwrap();
        assert_eq!(map.top_cell(), k, "seed {seed}");
        let rest = map.weights.iter().enumerate().filter(|&(i, _)| i != k).map(|(_, v)| v.abs()).fold(0.0, f64::max);
        assert!(map.weights[k].abs() > 5.0 * rest, "seed {seed}: {} vs {rest}", map.weights[k]);
        assert!(map.weights[k] > 0.0);
    }
}

#[test]
fn grid_cells_are_as_equal_as_integer_division_allows() {
    for (w, h, gx, gy) in [(64, 48, 8, 8), (97, 61, 7, 5), (10, 10, 3, 4), (5, 3, 5, 3)] {
        let img = GrayImage::filled(w, h, 0).unwrap();
        let seg = grid_segments(&img, gx, gy).unwrap();
        let (mut widths, mut heights) = (vec![0usize; gx], vec![0usize; gy]);
        seg.cells[..w].iter().for_each(|&c| widths[c % gx] += 1);
        (0..h).for_each(|y| heights[seg.cells[y * w] / gx] += 1);
        let spread = |v: &[usize]| v.iter().max().unwrap() - v.iter().min().unwrap();
        assert!(spread(&widths) <= 1 && spread(&heights) <= 1, "{w}x{h} grid {gx}x{gy}");
        let mut counts = vec![0usize; gx * gy];
        seg.cells.iter().for_each(|&c| counts[c] += 1);
        let (lo, hi) = (*counts.iter().min().unwrap(), *counts.iter().max().unwrap());
        assert!(lo > 0 && hi - lo <= w / gx + h / gy + 1, "{counts:?}");
        for (i, &c) in seg.cells.iter().enumerate() {
            assert_eq!(c, (i / w * gy / h) * gx + (i % w) * gx / w);
        }
    }
}
