use crate::error::Result;
use crate::scalar::Scalar;
use crate::tape::{BackCtx, Op, Tape, Var};
use crate::Tensor;

/// Row-wise softmax over the trailing axis of `data`, max-subtracted.
pub fn softmax_rows<T: Scalar>(data: &[T], width: usize) -> Vec<T> {
    let mut out = vec![T::zero(); data.len()];
    for (src, dst) in data.chunks_exact(width).zip(out.chunks_exact_mut(width)) {
        let max = src.iter().copied().fold(T::neg_infinity(), T::max);
        let mut total = T::zero();
        for (d, &s) in dst.iter_mut().zip(src) {
            *d = (s - max).exp();
            total += *d;
        }
        dst.iter_mut().for_each(|d| *d /= total);
    }
    out
}

impl<T: Scalar> Tape<T> {
    /// `max(x, 0)`; the subgradient at zero is taken as zero.
    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let tracked = self.checked(&[x])?;
        let v = self.value(x);
        let out = v.data().iter().map(|&a| if a > T::zero() { a } else { T::zero() }).collect();
        self.push("relu", v.shape().to_vec(), out, Op::Relu { x }, tracked)
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let tracked = self.checked(&[x])?;
        let v: &Tensor<T> = self.value(x);
        let width = *v.shape().last().expect("rank >= 1");
        let out = softmax_rows(v.data(), width);
        self.push("softmax", v.shape().to_vec(), out, Op::Softmax { x }, tracked)
    }
}

pub(crate) fn relu_backward<T: Scalar>(ctx: &mut BackCtx<'_, T>, g: &[T], x: Var) {
    let xv = ctx.value(x).data();
    ctx.accumulate(x, |dx| {
        for ((a, &d), &v) in dx.iter_mut().zip(g).zip(xv) {
            if v > T::zero() {
                *a += d;
            }
        }
    });
}

pub(crate) fn softmax_backward<T: Scalar>(ctx: &mut BackCtx<'_, T>, g: &[T], x: Var, out: &Tensor<T>) {
    let width = *out.shape().last().expect("rank >= 1");
    ctx.accumulate(x, |dx| {
        for ((dxr, gr), yr) in dx.chunks_exact_mut(width).zip(g.chunks_exact(width)).zip(out.data().chunks_exact(width)) {
            let dot: T = gr.iter().zip(yr).map(|(&a, &b)| a * b).sum();
            for ((a, &d), &y) in dxr.iter_mut().zip(gr).zip(yr) {
                *a += y * (d - dot);
            }
        }
    });
}
