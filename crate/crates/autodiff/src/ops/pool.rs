use crate::error::{shape_err, AutodiffError, Result};
use crate::ops::conv::out_extent;
use crate::scalar::Scalar;
use crate::tape::{BackCtx, Op, Tape, Var};

fn rank4(op: &'static str, shape: &[usize]) -> Result<[usize; 4]> {
    <[usize; 4]>::try_from(shape).map_err(|_| shape_err(op, format!("input {shape:?} must be rank 4")))
}

/// Row range `[start, end)` of adaptive-pool cell `i` when splitting `size`
/// into `cells` parts: `floor(i*size/cells) .. floor((i+1)*size/cells)`.
pub(crate) fn partition(i: usize, size: usize, cells: usize) -> (usize, usize) {
    (i * size / cells, (i + 1) * size / cells)
}

impl<T: Scalar> Tape<T> {
    /// Windowed maximum over `k×k` windows. The gradient of each window goes
    /// to its first maximal element in row-major order.
    pub fn max_pool2d(&mut self, x: Var, k: usize, stride: usize) -> Result<Var> {
        let tracked = self.checked(&[x])?;
        let [n, c, h, w] = rank4("max_pool2d", self.shape(x))?;
        let extent = |size| {
            out_extent(size, 0, k, stride).ok_or_else(|| AutodiffError::NonPositiveExtent {
                op: "max_pool2d",
                detail: format!("window {k} (stride {stride}) larger than input extent {size}"),
            })
        };
        let (oh, ow) = (extent(h)?, extent(w)?);
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(n * c * oh * ow);
        let mut argmax = Vec::with_capacity(n * c * oh * ow);
        for plane in 0..n * c {
            let base = plane * h * w;
            if k == 2 && stride == 2 {
                for oy in 0..oh {
                    let top = base + 2 * oy * w;
                    let (r0, r1) = (&src[top..top + w], &src[top + w..top + 2 * w]);
                    for ox in 0..ow {
                        let j = 2 * ox;
                        let (mut best, mut bv) = (top + j, r0[j]);
                        for (idx, v) in [(top + j + 1, r0[j + 1]), (top + w + j, r1[j]), (top + w + j + 1, r1[j + 1])] {
                            if v > bv {
                                best = idx;
                                bv = v;
                            }
                        }
                        out.push(bv);
                        argmax.push(best);
                    }
                }
                continue;
            }
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = base + oy * stride * w + ox * stride;
                    for i in 0..k {
                        for j in 0..k {
                            let idx = base + (oy * stride + i) * w + ox * stride + j;
                            if src[idx] > src[best] {
                                best = idx;
                            }
                        }
                    }
                    out.push(src[best]);
                    argmax.push(best);
                }
            }
        }
        if !tracked {
            argmax = Vec::new();
        }
        self.push("max_pool2d", vec![n, c, oh, ow], out, Op::MaxPool { x, argmax }, tracked)
    }

    /// Averages `x [N,C,H,W]` onto an `out_h × out_w` grid of near-equal
    /// cells (see [`partition`]).
    pub fn adaptive_avg_pool(&mut self, x: Var, out_h: usize, out_w: usize) -> Result<Var> {
        let tracked = self.checked(&[x])?;
        let [n, c, h, w] = rank4("adaptive_avg_pool", self.shape(x))?;
        if out_h == 0 || out_w == 0 {
            return Err(AutodiffError::NonPositiveExtent {
                op: "adaptive_avg_pool",
                detail: format!("target {out_h}x{out_w}"),
            });
        }
        if out_h > h || out_w > w {
            return Err(AutodiffError::InvalidArgument {
                op: "adaptive_avg_pool",
                detail: format!("target {out_h}x{out_w} exceeds input {h}x{w}"),
            });
        }
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(n * c * out_h * out_w);
        for plane in src.chunks_exact(h * w) {
            for i in 0..out_h {
                let (r0, r1) = partition(i, h, out_h);
                for j in 0..out_w {
                    let (c0, c1) = partition(j, w, out_w);
                    let mut acc = T::zero();
                    for r in r0..r1 {
                        acc += plane[r * w + c0..r * w + c1].iter().copied().sum::<T>();
                    }
                    out.push(acc / T::of(((r1 - r0) * (c1 - c0)) as f64));
                }
            }
        }
        self.push("adaptive_avg_pool", vec![n, c, out_h, out_w], out, Op::AdaptiveAvgPool { x, out_h, out_w }, tracked)
    }
}

pub(crate) fn max_pool_backward<T: Scalar>(ctx: &mut BackCtx<'_, T>, g: &[T], x: Var, argmax: &[usize]) {
    ctx.accumulate(x, |dx| {
        for (&d, &idx) in g.iter().zip(argmax) {
            dx[idx] += d;
        }
    });
}

pub(crate) fn adaptive_avg_pool_backward<T: Scalar>(
    ctx: &mut BackCtx<'_, T>,
    g: &[T],
    x: Var,
    out_h: usize,
    out_w: usize,
) {
    let [_, _, h, w] = rank4("adaptive_avg_pool", ctx.value(x).shape()).expect("checked in forward");
    ctx.accumulate(x, |dx| {
        for (plane, gp) in dx.chunks_exact_mut(h * w).zip(g.chunks_exact(out_h * out_w)) {
            for i in 0..out_h {
                let (r0, r1) = partition(i, h, out_h);
                for j in 0..out_w {
                    let (c0, c1) = partition(j, w, out_w);
                    let share = gp[i * out_w + j] / T::of(((r1 - r0) * (c1 - c0)) as f64);
                    for r in r0..r1 {
                        plane[r * w + c0..r * w + c1].iter_mut().for_each(|v| *v += share);
                    }
                }
            }
        }
    });
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Tensor;

    #[test]
    fn single_window_max() {
        let mut tape = Tape::<f32>::new();
        let x = tape.constant(Tensor::new(vec![1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let y = tape.max_pool2d(x, 2, 2).unwrap();
        assert_eq!(tape.value(y).data(), &[4.0]);
        assert_eq!(tape.shape(y), &[1, 1, 1, 1]);
    }

    #[test]
    fn constant_input_constant_output() {
        let mut tape = Tape::<f32>::new();
        let x = tape.constant(Tensor::full(vec![2, 3, 6, 4], 1.5).unwrap());
        let y = tape.max_pool2d(x, 2, 2).unwrap();
        assert_eq!(tape.shape(y), &[2, 3, 3, 2]);
        assert!(tape.value(y).data().iter().all(|&v| v == 1.5));
    }

    #[test]
    fn ties_route_to_first_element() {
        let mut tape = Tape::<f64>::new();
        let x = tape.param(Tensor::full(vec![1, 1, 2, 2], 3.0).unwrap());
        let y = tape.max_pool2d(x, 2, 2).unwrap();
        let s = tape.sum(y).unwrap();
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn window_larger_than_input() {
        let mut tape = Tape::<f32>::new();
        let x = tape.constant(Tensor::ones(vec![1, 1, 1, 3]).unwrap());
        assert!(matches!(tape.max_pool2d(x, 2, 2), Err(AutodiffError::NonPositiveExtent { .. })));
    }

    #[test]
    fn adaptive_pool_ramp() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::from_fn(vec![1, 1, 4, 4], |i| i as f64).unwrap());
        let y = tape.adaptive_avg_pool(x, 2, 2).unwrap();
        assert_eq!(tape.value(y).data(), &[2.5, 4.5, 10.5, 12.5]);
    }

    #[test]
    fn adaptive_pool_global_mean_and_constant() {
        let mut tape = Tape::<f64>::new();
        let data: Vec<f64> = (0..15).map(|i| (i * i) as f64).collect();
        let mean = data.iter().sum::<f64>() / 15.0;
        let x = tape.constant(Tensor::new(vec![1, 1, 3, 5], data).unwrap());
        let y = tape.adaptive_avg_pool(x, 1, 1).unwrap();
        assert!((tape.value(y).data()[0] - mean).abs() < 1e-12);

        let c = tape.constant(Tensor::full(vec![1, 2, 4, 4], 3.0).unwrap());
        let y = tape.adaptive_avg_pool(c, 2, 2).unwrap();
        assert!(tape.value(y).data().iter().all(|&v| v == 3.0));
    }

    #[test]
    fn adaptive_pool_rejects_zero_target() {
        let mut tape = Tape::<f32>::new();
        let x = tape.constant(Tensor::ones(vec![1, 1, 4, 4]).unwrap());
        assert!(matches!(tape.adaptive_avg_pool(x, 0, 2), Err(AutodiffError::NonPositiveExtent { .. })));
    }
}
