//! 2-D convolution via im2col + GEMM.
//!
//! Cross-correlation convention: the kernel is not flipped, so
//! `out[n,f,y,x] = bias[f] + sum_{c,i,j} in[n,c,y*s-p+i,x*s-p+j] * w[f,c,i,j]`
//! with zero padding outside the input.

use crate::error::{shape_err, AutodiffError, Result};
use crate::scalar::{gemm, MatRef, Scalar};
use crate::tape::{BackCtx, Op, Tape, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub f: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub oh: usize,
    pub ow: usize,
}

impl ConvGeom {
    fn patch(&self) -> usize {
        self.c * self.kh * self.kw
    }

    fn plane(&self) -> usize {
        self.oh * self.ow
    }
}

/// Output extent of a strided window sweep, or `None` if non-positive.
pub(crate) fn out_extent(size: usize, pad: usize, k: usize, stride: usize) -> Option<usize> {
    let padded = size + 2 * pad;
    if stride == 0 || k == 0 || padded < k {
        return None;
    }
    Some((padded - k) / stride + 1)
}

/// Output columns `[lo, hi)` whose tap `kj` lands inside the input row
/// (stride 1 only).
fn valid_cols(g: &ConvGeom, kj: usize) -> (usize, usize) {
    let lo = g.pad.saturating_sub(kj).min(g.ow);
    let hi = (g.w + g.pad).saturating_sub(kj).min(g.ow).max(lo);
    (lo, hi)
}

fn im2col<T: Scalar>(x: &[T], g: &ConvGeom, col: &mut [T]) {
    let plane = g.plane();
    for c in 0..g.c {
        let xc = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let dst = &mut col[row * plane..(row + 1) * plane];
                for oy in 0..g.oh {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    let line = &mut dst[oy * g.ow..(oy + 1) * g.ow];
                    if iy < 0 || iy >= g.h as isize {
                        line.fill(T::zero());
                        continue;
                    }
                    let src = &xc[iy as usize * g.w..(iy as usize + 1) * g.w];
                    if g.stride == 1 {
                        let (lo, hi) = valid_cols(g, kj);
                        line[..lo].fill(T::zero());
                        line[hi..].fill(T::zero());
                        if hi > lo {
                            let start = lo + kj - g.pad;
                            line[lo..hi].copy_from_slice(&src[start..start + hi - lo]);
                        }
                        continue;
                    }
                    for (ox, out) in line.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                        *out = if ix < 0 || ix >= g.w as isize { T::zero() } else { src[ix as usize] };
                    }
                }
            }
        }
    }
}

fn col2im<T: Scalar>(col: &[T], g: &ConvGeom, dx: &mut [T]) {
    let plane = g.plane();
    for c in 0..g.c {
        let dxc = &mut dx[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let src = &col[row * plane..(row + 1) * plane];
                for oy in 0..g.oh {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let dst = &mut dxc[iy as usize * g.w..(iy as usize + 1) * g.w];
                    let line = &src[oy * g.ow..(oy + 1) * g.ow];
                    if g.stride == 1 {
                        let (lo, hi) = valid_cols(g, kj);
                        if hi == lo {
                            continue;
                        }
                        let start = lo + kj - g.pad;
                        for (d, &v) in dst[start..start + hi - lo].iter_mut().zip(&line[lo..hi]) {
                            *d += v;
                        }
                        continue;
                    }
                    for (ox, &v) in line.iter().enumerate() {
                        let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.w as isize {
                            dst[ix as usize] += v;
                        }
                    }
                }
            }
        }
    }
}

impl<T: Scalar> Tape<T> {
    /// `input [N,C,H,W]`, `weight [F,C,kH,kW]`, `bias [F]` → `[N,F,H',W']`
    /// with `H' = (H + 2·padding − kH)/stride + 1`.
    pub fn conv2d(&mut self, input: Var, weight: Var, bias: Var, stride: usize, padding: usize) -> Result<Var> {
        let tracked = self.checked(&[input, weight, bias])?;
        let (xs, ws, bs) = (self.shape(input), self.shape(weight), self.shape(bias));
        if xs.len() != 4 || ws.len() != 4 {
            return Err(shape_err("conv2d", format!("input {xs:?} and kernel {ws:?} must be rank 4")));
        }
        if ws[1] != xs[1] {
            return Err(shape_err(
                "conv2d",
                format!("kernel expects {} channels, input has {}", ws[1], xs[1]),
            ));
        }
        if bs != [ws[0]] {
            return Err(shape_err("conv2d", format!("bias {bs:?} must be [{}]", ws[0])));
        }
        let extent = |size, k| {
            out_extent(size, padding, k, stride).ok_or_else(|| AutodiffError::NonPositiveExtent {
                op: "conv2d",
                detail: format!("size {size}, padding {padding}, kernel {k}, stride {stride}"),
            })
        };
        let (oh, ow) = (extent(xs[2], ws[2])?, extent(xs[3], ws[3])?);
        let geom = ConvGeom {
            n: xs[0],
            c: xs[1],
            h: xs[2],
            w: xs[3],
            f: ws[0],
            kh: ws[2],
            kw: ws[3],
            stride,
            pad: padding,
            oh,
            ow,
        };

        let (patch, plane) = (geom.patch(), geom.plane());
        let x = self.value(input).data();
        let w = self.value(weight).data();
        let b = self.value(bias).data();
        let mut out = vec![T::zero(); geom.n * geom.f * plane];
        let in_size = geom.c * geom.h * geom.w;
        T::with_scratch(0, patch * plane, |col| {
            for n in 0..geom.n {
                im2col(&x[n * in_size..(n + 1) * in_size], &geom, col);
                let dst = &mut out[n * geom.f * plane..(n + 1) * geom.f * plane];
                for (f, row) in dst.chunks_exact_mut(plane).enumerate() {
                    row.fill(b[f]);
                }
                gemm(MatRef::new(w, geom.f, patch), MatRef::new(col, patch, plane), T::one(), dst);
            }
        });
        self.push(
            "conv2d",
            vec![geom.n, geom.f, oh, ow],
            out,
            Op::Conv2d { input, weight, bias, geom },
            tracked,
        )
    }
}

pub(crate) fn conv2d_backward<T: Scalar>(
    ctx: &mut BackCtx<'_, T>,
    g: &[T],
    input: Var,
    weight: Var,
    bias: Var,
    geom: &ConvGeom,
) {
    let (patch, plane) = (geom.patch(), geom.plane());
    let out_size = geom.f * plane;

    ctx.accumulate(bias, |db| {
        for n in 0..geom.n {
            for (f, row) in g[n * out_size..(n + 1) * out_size].chunks_exact(plane).enumerate() {
                db[f] += row.iter().copied().sum::<T>();
            }
        }
    });

    let in_size = geom.c * geom.h * geom.w;
    if ctx.needs(weight) {
        // columns are rebuilt from the stored input rather than kept alive
        let x = ctx.value(input).data();
        ctx.accumulate(weight, |dw| {
            T::with_scratch(0, patch * plane, |col| {
                for n in 0..geom.n {
                    im2col(&x[n * in_size..(n + 1) * in_size], geom, col);
                    let dy = MatRef::new(&g[n * out_size..(n + 1) * out_size], geom.f, plane);
                    gemm(dy, MatRef::new(col, patch, plane).t(), T::one(), dw);
                }
            })
        });
    }

    if ctx.needs(input) {
        let w = ctx.value(weight).data();
        ctx.accumulate(input, |dx| {
            T::with_scratch(1, patch * plane, |dcol| {
                for n in 0..geom.n {
                    let dy = MatRef::new(&g[n * out_size..(n + 1) * out_size], geom.f, plane);
                    gemm(MatRef::new(w, geom.f, patch).t(), dy, T::zero(), dcol);
                    col2im(dcol, geom, &mut dx[n * in_size..(n + 1) * in_size]);
                }
            })
        });
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Tensor;

    fn run(x: Tensor<f64>, w: Tensor<f64>, b: Tensor<f64>, stride: usize, pad: usize) -> Result<Tensor<f64>> {
        let mut tape = Tape::new();
        let (x, w, b) = (tape.constant(x), tape.constant(w), tape.constant(b));
        let y = tape.conv2d(x, w, b, stride, pad)?;
        Ok(tape.value(y).clone())
    }

    #[test]
    fn scalar_kernel_scales() {
        let y = run(
            Tensor::ones(vec![1, 1, 3, 3]).unwrap(),
            Tensor::new(vec![1, 1, 1, 1], vec![2.0]).unwrap(),
            Tensor::zeros(vec![1]).unwrap(),
            1,
            0,
        )
        .unwrap();
        assert_eq!(y.shape(), &[1, 1, 3, 3]);
        assert!(y.data().iter().all(|&v| v == 2.0));
    }

    #[test]
    fn full_window_sum_plus_bias() {
        let y = run(
            Tensor::new(vec![1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap(),
            Tensor::ones(vec![1, 1, 2, 2]).unwrap(),
            Tensor::new(vec![1], vec![0.5]).unwrap(),
            1,
            0,
        )
        .unwrap();
        assert_eq!(y.shape(), &[1, 1, 1, 1]);
        assert_eq!(y.data(), &[10.5]);
    }

    #[test]
    fn channel_mismatch_is_shape_error() {
        let err = run(
            Tensor::ones(vec![1, 2, 3, 3]).unwrap(),
            Tensor::ones(vec![1, 3, 1, 1]).unwrap(),
            Tensor::zeros(vec![1]).unwrap(),
            1,
            0,
        )
        .unwrap_err();
        assert!(matches!(err, AutodiffError::ShapeMismatch { op: "conv2d", .. }));
    }

    #[test]
    fn kernel_larger_than_padded_input() {
        let err = run(
            Tensor::ones(vec![1, 1, 2, 2]).unwrap(),
            Tensor::ones(vec![1, 1, 5, 5]).unwrap(),
            Tensor::zeros(vec![1]).unwrap(),
            1,
            1,
        )
        .unwrap_err();
        assert!(matches!(err, AutodiffError::NonPositiveExtent { .. }));
    }

    #[test]
    fn same_padding_keeps_extent() {
        let y = run(
            Tensor::ones(vec![1, 1, 6, 5]).unwrap(),
            Tensor::ones(vec![2, 1, 5, 5]).unwrap(),
            Tensor::zeros(vec![2]).unwrap(),
            1,
            2,
        )
        .unwrap();
        assert_eq!(y.shape(), &[1, 2, 6, 5]);
        // centre pixel sees the full 5x5 window, the corner only 3x3
        assert_eq!(y.data()[2 * 5 + 2], 25.0);
        assert_eq!(y.data()[0], 9.0);
    }
}
