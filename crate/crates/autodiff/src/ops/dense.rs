//! Matrix products and 2-D row/column plumbing.

use crate::error::{shape_err, AutodiffError, Result};
use crate::scalar::{gemm, MatRef, Scalar};
use crate::tape::{BackCtx, Op, Tape, Var};

fn matrix(op: &'static str, shape: &[usize]) -> Result<(usize, usize)> {
    match *shape {
        [r, c] => Ok((r, c)),
        _ => Err(shape_err(op, format!("expected a matrix, got {shape:?}"))),
    }
}

impl<T: Scalar> Tape<T> {
    /// Affine map over the last axis: `x [..., Din] · weight [Din, Dout] + bias [Dout]`.
    pub fn linear(&mut self, x: Var, weight: Var, bias: Var) -> Result<Var> {
        let tracked = self.checked(&[x, weight, bias])?;
        let xs = self.shape(x).to_vec();
        let (din, dout) = matrix("linear", self.shape(weight))?;
        if *xs.last().expect("rank >= 1") != din {
            return Err(shape_err("linear", format!("input {xs:?} does not end in {din}")));
        }
        if self.shape(bias) != [dout] {
            return Err(shape_err("linear", format!("bias {:?} must be [{dout}]", self.shape(bias))));
        }
        let rows = self.value(x).numel() / din;
        let b = self.value(bias).data();
        let mut out: Vec<T> = (0..rows).flat_map(|_| b.iter().copied()).collect();
        gemm(
            MatRef::new(self.value(x).data(), rows, din),
            MatRef::new(self.value(weight).data(), din, dout),
            T::one(),
            &mut out,
        );
        let mut shape = xs;
        *shape.last_mut().expect("rank >= 1") = dout;
        self.push("linear", shape, out, Op::Linear { x, weight, bias }, tracked)
    }

    /// `a [M,K] · b [K,N]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let tracked = self.checked(&[a, b])?;
        let (m, k) = matrix("matmul", self.shape(a))?;
        let (kb, n) = matrix("matmul", self.shape(b))?;
        if k != kb {
            return Err(shape_err("matmul", format!("[{m},{k}] x [{kb},{n}]")));
        }
        let mut out = vec![T::zero(); m * n];
        gemm(
            MatRef::new(self.value(a).data(), m, k),
            MatRef::new(self.value(b).data(), k, n),
            T::zero(),
            &mut out,
        );
        self.push("matmul", vec![m, n], out, Op::MatMul { a, b }, tracked)
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let tracked = self.checked(&[x])?;
        let (r, c) = matrix("transpose", self.shape(x))?;
        let src = self.value(x).data();
        let out = (0..c * r).map(|i| src[(i % r) * c + i / r]).collect();
        self.push("transpose", vec![c, r], out, Op::Transpose { x }, tracked)
    }

    /// Mean over the rows of `x [L, D]`, giving `[1, D]`.
    pub fn mean_rows(&mut self, x: Var) -> Result<Var> {
        let tracked = self.checked(&[x])?;
        let (l, d) = matrix("mean_rows", self.shape(x))?;
        let mut out = vec![T::zero(); d];
        for row in self.value(x).data().chunks_exact(d) {
            for (o, &v) in out.iter_mut().zip(row) {
                *o += v;
            }
        }
        let inv = T::one() / T::of(l as f64);
        out.iter_mut().for_each(|v| *v *= inv);
        self.push("mean_rows", vec![1, d], out, Op::MeanRows { x }, tracked)
    }

    /// Columns `start .. start + width` of `x [L, D]`.
    pub fn slice_cols(&mut self, x: Var, start: usize, width: usize) -> Result<Var> {
        let tracked = self.checked(&[x])?;
        let (l, d) = matrix("slice_cols", self.shape(x))?;
        if width == 0 || start + width > d {
            return Err(AutodiffError::InvalidArgument {
                op: "slice_cols",
                detail: format!("columns {start}..{} of {d}", start + width),
            });
        }
        let out = self
            .value(x)
            .data()
            .chunks_exact(d)
            .flat_map(|row| row[start..start + width].iter().copied())
            .collect();
        self.push("slice_cols", vec![l, width], out, Op::SliceCols { x, start }, tracked)
    }

    /// Side-by-side concatenation of matrices with equal row counts.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let tracked = self.checked(parts)?;
        let Some(&first) = parts.first() else {
            return Err(AutodiffError::InvalidArgument { op: "concat_cols", detail: "no inputs".into() });
        };
        let (l, _) = matrix("concat_cols", self.shape(first))?;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (pl, pw) = matrix("concat_cols", self.shape(p))?;
            if pl != l {
                return Err(shape_err("concat_cols", format!("row counts {l} and {pl}")));
            }
            widths.push(pw);
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(l * total);
        for r in 0..l {
            for (&p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.value(p).data()[r * w..(r + 1) * w]);
            }
        }
        self.push("concat_cols", vec![l, total], out, Op::ConcatCols { parts: parts.to_vec() }, tracked)
    }

    /// Row `i` of the output is row `index[i]` of `x [L, D]`.
    pub fn gather_rows(&mut self, x: Var, index: &[usize]) -> Result<Var> {
        let tracked = self.checked(&[x])?;
        let (l, d) = matrix("gather_rows", self.shape(x))?;
        if index.is_empty() || index.iter().any(|&i| i >= l) {
            return Err(AutodiffError::InvalidArgument {
                op: "gather_rows",
                detail: format!("indices must be in 0..{l}"),
            });
        }
        let src = self.value(x).data();
        let out = index.iter().flat_map(|&i| src[i * d..(i + 1) * d].iter().copied()).collect();
        self.push("gather_rows", vec![index.len(), d], out, Op::GatherRows { x, index: index.to_vec() }, tracked)
    }
}

pub(crate) fn linear_backward<T: Scalar>(ctx: &mut BackCtx<'_, T>, g: &[T], x: Var, weight: Var, bias: Var) {
    let wv = ctx.value(weight);
    let (din, dout) = (wv.shape()[0], wv.shape()[1]);
    let xv = ctx.value(x).data();
    let rows = xv.len() / din;
    ctx.accumulate(bias, |db| {
        for row in g.chunks_exact(dout) {
            for (a, &d) in db.iter_mut().zip(row) {
                *a += d;
            }
        }
    });
    ctx.accumulate(weight, |dw| {
        gemm(MatRef::new(xv, rows, din).t(), MatRef::new(g, rows, dout), T::one(), dw);
    });
    ctx.accumulate(x, |dx| {
        gemm(MatRef::new(g, rows, dout), MatRef::new(wv.data(), din, dout).t(), T::one(), dx);
    });
}

pub(crate) fn matmul_backward<T: Scalar>(ctx: &mut BackCtx<'_, T>, g: &[T], a: Var, b: Var) {
    let (av, bv) = (ctx.value(a), ctx.value(b));
    let (m, k) = (av.shape()[0], av.shape()[1]);
    let n = bv.shape()[1];
    ctx.accumulate(a, |da| {
        gemm(MatRef::new(g, m, n), MatRef::new(bv.data(), k, n).t(), T::one(), da);
    });
    ctx.accumulate(b, |db| {
        gemm(MatRef::new(av.data(), m, k).t(), MatRef::new(g, m, n), T::one(), db);
    });
}

pub(crate) fn transpose_backward<T: Scalar>(ctx: &mut BackCtx<'_, T>, g: &[T], x: Var) {
    let (r, c) = (ctx.value(x).shape()[0], ctx.value(x).shape()[1]);
    // g is [c, r]
    ctx.accumulate(x, |dx| {
        for i in 0..r {
            for j in 0..c {
                dx[i * c + j] += g[j * r + i];
            }
        }
    });
}

pub(crate) fn mean_rows_backward<T: Scalar>(ctx: &mut BackCtx<'_, T>, g: &[T], x: Var) {
    let l = ctx.value(x).shape()[0];
    let inv = T::one() / T::of(l as f64);
    ctx.accumulate(x, |dx| {
        for row in dx.chunks_exact_mut(g.len()) {
            for (a, &d) in row.iter_mut().zip(g) {
                *a += d * inv;
            }
        }
    });
}

pub(crate) fn slice_cols_backward<T: Scalar>(ctx: &mut BackCtx<'_, T>, g: &[T], x: Var, start: usize, width: usize) {
    let d = ctx.value(x).shape()[1];
    ctx.accumulate(x, |dx| {
        for (row, grow) in dx.chunks_exact_mut(d).zip(g.chunks_exact(width)) {
            for (a, &v) in row[start..start + width].iter_mut().zip(grow) {
                *a += v;
            }
        }
    });
}

pub(crate) fn concat_cols_backward<T: Scalar>(ctx: &mut BackCtx<'_, T>, g: &[T], parts: &[Var]) {
    let widths: Vec<usize> = parts.iter().map(|&p| ctx.value(p).shape()[1]).collect();
    let total: usize = widths.iter().sum();
    let mut offset = 0;
    for (&p, &w) in parts.iter().zip(&widths) {
        ctx.accumulate(p, |dp| {
            for (row, grow) in dp.chunks_exact_mut(w).zip(g.chunks_exact(total)) {
                for (a, &v) in row.iter_mut().zip(&grow[offset..offset + w]) {
                    *a += v;
                }
            }
        });
        offset += w;
    }
}

pub(crate) fn gather_rows_backward<T: Scalar>(ctx: &mut BackCtx<'_, T>, g: &[T], x: Var, index: &[usize]) {
    let d = ctx.value(x).shape()[1];
    ctx.accumulate(x, |dx| {
        for (&i, grow) in index.iter().zip(g.chunks_exact(d)) {
            for (a, &v) in dx[i * d..(i + 1) * d].iter_mut().zip(grow) {
                *a += v;
            }
        }
    });
}
