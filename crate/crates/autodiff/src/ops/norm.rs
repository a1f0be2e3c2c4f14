//! Group and layer normalization.
//!
//! Both normalize contiguous blocks of elements to zero mean and unit
//! (biased) variance, `xhat = (x - mean) / sqrt(var + eps)`, then apply a
//! per-channel (group norm) or per-feature (layer norm) affine map.

use crate::error::{shape_err, AutodiffError, Result};
use crate::scalar::Scalar;
use crate::tape::{BackCtx, Op, Tape, Var};

pub(crate) struct NormStats<T> {
    pub xhat: Vec<T>,
    /// One entry per normalized block.
    pub inv_std: Vec<T>,
    /// Elements per block.
    pub block: usize,
    /// Consecutive elements sharing one affine coefficient.
    pub span: usize,
    /// Number of affine coefficients (cycled through blocks).
    pub features: usize,
}

/// Sum with eight independent accumulators, so the loop vectorizes while
/// the reduction order stays fixed.
fn lane_sum<T: Scalar>(xs: &[T], f: impl Fn(usize) -> T) -> T {
    let mut acc = [T::zero(); 8];
    let full = xs.len() / 8 * 8;
    for base in (0..full).step_by(8) {
        for (l, a) in acc.iter_mut().enumerate() {
            *a += f(base + l);
        }
    }
    let mut s = ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7]));
    for i in full..xs.len() {
        s += f(i);
    }
    s
}

fn normalize<T: Scalar>(x: &[T], block: usize, eps: T) -> (Vec<T>, Vec<T>) {
    let mut xhat = vec![T::zero(); x.len()];
    let mut inv_std = Vec::with_capacity(x.len() / block);
    let m = T::of(block as f64);
    for (src, dst) in x.chunks_exact(block).zip(xhat.chunks_exact_mut(block)) {
        let mean = lane_sum(src, |i| src[i]) / m;
        let var = lane_sum(src, |i| (src[i] - mean) * (src[i] - mean)) / m;
        let is = T::one() / (var + eps).sqrt();
        for (d, &s) in dst.iter_mut().zip(src) {
            *d = (s - mean) * is;
        }
        inv_std.push(is);
    }
    (xhat, inv_std)
}

fn affine<T: Scalar>(stats: &NormStats<T>, gamma: &[T], beta: &[T]) -> Vec<T> {
    let mut out = vec![T::zero(); stats.xhat.len()];
    for (k, (dst, src)) in out.chunks_exact_mut(stats.span).zip(stats.xhat.chunks_exact(stats.span)).enumerate() {
        let f = k % stats.features;
        let (gm, bt) = (gamma[f], beta[f]);
        for (d, &xh) in dst.iter_mut().zip(src) {
            *d = xh * gm + bt;
        }
    }
    out
}

fn check_eps<T: Scalar>(op: &'static str, eps: T) -> Result<()> {
    if !(eps > T::zero()) {
        return Err(AutodiffError::InvalidArgument { op, detail: "eps must be positive".into() });
    }
    Ok(())
}

impl<T: Scalar> Tape<T> {
    /// Normalizes each (sample, channel-group) block of `x [N,C,H,W]`.
    pub fn group_norm(&mut self, x: Var, groups: usize, gamma: Var, beta: Var, eps: T) -> Result<Var> {
        let tracked = self.checked(&[x, gamma, beta])?;
        check_eps("group_norm", eps)?;
        let xs = self.shape(x).to_vec();
        if xs.len() != 4 {
            return Err(shape_err("group_norm", format!("input {xs:?} must be rank 4")));
        }
        let c = xs[1];
        if groups == 0 || c % groups != 0 {
            return Err(AutodiffError::InvalidArgument {
                op: "group_norm",
                detail: format!("{c} channels not divisible into {groups} groups"),
            });
        }
        if self.shape(gamma) != [c] || self.shape(beta) != [c] {
            return Err(shape_err("group_norm", format!("gamma/beta must be [{c}]")));
        }
        let span = xs[2] * xs[3];
        let block = c / groups * span;
        let (xhat, inv_std) = normalize(self.value(x).data(), block, eps);
        let stats = NormStats { xhat, inv_std, block, span, features: c };
        let out = affine(&stats, self.value(gamma).data(), self.value(beta).data());
        self.push("group_norm", xs, out, Op::GroupNorm { x, gamma, beta, stats }, tracked)
    }

    /// Normalizes over the last axis of `x [..., D]`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: T) -> Result<Var> {
        let tracked = self.checked(&[x, gamma, beta])?;
        check_eps("layer_norm", eps)?;
        let xs = self.shape(x).to_vec();
        let d = *xs.last().expect("tensors have rank >= 1");
        if self.shape(gamma) != [d] || self.shape(beta) != [d] {
            return Err(shape_err("layer_norm", format!("gamma/beta must be [{d}]")));
        }
        let (xhat, inv_std) = normalize(self.value(x).data(), d, eps);
        let stats = NormStats { xhat, inv_std, block: d, span: 1, features: d };
        let out = affine(&stats, self.value(gamma).data(), self.value(beta).data());
        self.push("layer_norm", xs, out, Op::LayerNorm { x, gamma, beta, stats }, tracked)
    }
}

pub(crate) fn norm_backward<T: Scalar>(ctx: &mut BackCtx<'_, T>, g: &[T], x: Var, gamma: Var, beta: Var, s: &NormStats<T>) {
    let spans = || g.chunks_exact(s.span).zip(s.xhat.chunks_exact(s.span)).enumerate();
    ctx.accumulate(beta, |db| {
        for (k, (gs, _)) in spans() {
            db[k % s.features] += lane_sum(gs, |i| gs[i]);
        }
    });
    ctx.accumulate(gamma, |dg| {
        for (k, (gs, xs)) in spans() {
            dg[k % s.features] += lane_sum(gs, |i| gs[i] * xs[i]);
        }
    });
    if !ctx.needs(x) {
        return;
    }
    let gm = ctx.value(gamma).data();
    let m = T::of(s.block as f64);
    ctx.accumulate(x, |dx| {
        let mut dxhat = vec![T::zero(); s.block];
        for (b, &is) in s.inv_std.iter().enumerate() {
            let base = b * s.block;
            let gb = &g[base..base + s.block];
            let xb = &s.xhat[base..base + s.block];
            for (k, (dst, src)) in dxhat.chunks_exact_mut(s.span).zip(gb.chunks_exact(s.span)).enumerate() {
                let f = gm[(base / s.span + k) % s.features];
                for (d, &v) in dst.iter_mut().zip(src) {
                    *d = v * f;
                }
            }
            let sum = lane_sum(&dxhat, |i| dxhat[i]);
            let dot = lane_sum(&dxhat, |i| dxhat[i] * xb[i]);
            let scale = is / m;
            for ((d, &dh), &xh) in dx[base..base + s.block].iter_mut().zip(&dxhat).zip(xb) {
                *d += scale * (m * dh - sum - xh * dot);
            }
        }
    });
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Tensor;

    #[test]
    fn constant_input_normalizes_to_zero() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::full(vec![1, 4, 3, 3], 7.5).unwrap());
        let g = tape.constant(Tensor::ones(vec![4]).unwrap());
        let b = tape.constant(Tensor::zeros(vec![4]).unwrap());
        let y = tape.group_norm(x, 2, g, b, 1e-5).unwrap();
        assert!(tape.value(y).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn beta_shifts_mean() {
        let mut tape = Tape::<f64>::new();
        let data: Vec<f64> = (0..2 * 3 * 2 * 2).map(|i| ((i * 7) % 11) as f64 - 3.0).collect();
        let x = tape.constant(Tensor::new(vec![2, 3, 2, 2], data).unwrap());
        let g = tape.constant(Tensor::ones(vec![3]).unwrap());
        let b = tape.constant(Tensor::full(vec![3], 5.0).unwrap());
        let y = tape.group_norm(x, 1, g, b, 1e-5).unwrap();
        for sample in tape.value(y).data().chunks(12) {
            let mean = sample.iter().sum::<f64>() / 12.0;
            assert!((mean - 5.0).abs() < 1e-12, "{mean}");
        }
    }

    #[test]
    fn indivisible_groups_rejected() {
        let mut tape = Tape::<f32>::new();
        let x = tape.constant(Tensor::ones(vec![1, 6, 2, 2]).unwrap());
        let g = tape.constant(Tensor::ones(vec![6]).unwrap());
        let b = tape.constant(Tensor::zeros(vec![6]).unwrap());
        assert!(matches!(
            tape.group_norm(x, 4, g, b, 1e-5),
            Err(AutodiffError::InvalidArgument { op: "group_norm", .. })
        ));
    }

    #[test]
    fn layer_norm_rows_standardized() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::new(vec![2, 4], vec![1.0, 2.0, 3.0, 4.0, -1.0, 0.0, 5.0, 9.0]).unwrap());
        let g = tape.constant(Tensor::ones(vec![4]).unwrap());
        let b = tape.constant(Tensor::zeros(vec![4]).unwrap());
        let y = tape.layer_norm(x, g, b, 1e-9).unwrap();
        for row in tape.value(y).data().chunks(4) {
            let mean = row.iter().sum::<f64>() / 4.0;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 4.0;
            assert!(mean.abs() < 1e-12);
            assert!((var - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn layer_norm_constant_row_is_zero() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::full(vec![3, 5], -2.0).unwrap());
        let g = tape.constant(Tensor::ones(vec![5]).unwrap());
        let b = tape.constant(Tensor::zeros(vec![5]).unwrap());
        let y = tape.layer_norm(x, g, b, 1e-5).unwrap();
        assert!(tape.value(y).data().iter().all(|&v| v == 0.0));
    }
}
