//! Wengert-list tape for reverse-mode differentiation.
//!
//! Every forward operation appends one node holding its output tensor and,
//! when any input tracks gradients, the information its backward rule needs.
//! Nodes are only ever appended, so the list is topologically ordered by
//! construction and `backward` is a single reverse sweep.

use std::sync::atomic::{AtomicU32, Ordering};

use crate::error::{AutodiffError, Result};
use crate::ops::{activation, conv, dense, loss, norm, pool};
use crate::scalar::Scalar;
use crate::tensor::{first_non_finite, Tensor};

static NEXT_TAPE_ID: AtomicU32 = AtomicU32::new(1);

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var {
    tape: u32,
    index: u32,
}

impl Var {
    pub fn index(self) -> usize {
        self.index as usize
    }
}

pub(crate) enum Op<T> {
    Leaf,
    Conv2d { input: Var, weight: Var, bias: Var, geom: conv::ConvGeom },
    GroupNorm { x: Var, gamma: Var, beta: Var, stats: norm::NormStats<T> },
    LayerNorm { x: Var, gamma: Var, beta: Var, stats: norm::NormStats<T> },
    Relu { x: Var },
    MaxPool { x: Var, argmax: Vec<usize> },
    AdaptiveAvgPool { x: Var, out_h: usize, out_w: usize },
    Linear { x: Var, weight: Var, bias: Var },
    MatMul { a: Var, b: Var },
    Transpose { x: Var },
    Softmax { x: Var },
    Scale { x: Var, factor: T },
    Add { a: Var, b: Var },
    Mul { a: Var, b: Var },
    Sum { x: Var },
    MeanRows { x: Var },
    Reshape { x: Var },
    SliceCols { x: Var, start: usize },
    ConcatCols { parts: Vec<Var> },
    GatherRows { x: Var, index: Vec<usize> },
    CrossEntropy { y: Var, target: Vec<T>, mode: loss::LossMode, clamp: T },
}

pub(crate) struct Node<T> {
    pub value: Tensor<T>,
    pub op: Op<T>,
}

/// Operation record for one forward pass.
///
/// Gradient tracking is opt-in per leaf ([`Tape::param`]); an operation
/// whose inputs are all untracked stores no backward state, so pure
/// inference on a tape is cheap.
pub struct Tape<T: Scalar = f32> {
    id: u32,
    nodes: Vec<Node<T>>,
    backward_done: bool,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self { id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed), nodes: Vec::new(), backward_done: false }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records a leaf, keeping the tensor's own `requires_grad` flag.
    pub fn leaf(&mut self, tensor: Tensor<T>) -> Var {
        self.push_node(tensor, Op::Leaf)
    }

    /// Records a gradient-tracked leaf.
    pub fn param(&mut self, mut tensor: Tensor<T>) -> Var {
        tensor.set_requires_grad(true);
        self.leaf(tensor)
    }

    /// Records an untracked leaf.
    pub fn constant(&mut self, mut tensor: Tensor<T>) -> Var {
        tensor.set_requires_grad(false);
        self.leaf(tensor)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[self.index(v).expect("variable from another tape")].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.value(v).shape()
    }

    /// Gradient of a tracked leaf after [`Tape::backward`].
    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.value(v).grad()
    }

    pub(crate) fn index(&self, v: Var) -> Result<usize> {
        if v.tape != self.id || v.index() >= self.nodes.len() {
            return Err(AutodiffError::ForeignVar);
        }
        Ok(v.index())
    }

    pub(crate) fn tracked(&self, v: Var) -> bool {
        self.nodes[v.index()].value.requires_grad()
    }

    pub(crate) fn checked(&self, vars: &[Var]) -> Result<bool> {
        let mut any = false;
        for &v in vars {
            self.index(v)?;
            any |= self.tracked(v);
        }
        Ok(any)
    }

    fn push_node(&mut self, value: Tensor<T>, op: Op<T>) -> Var {
        let index = u32::try_from(self.nodes.len()).expect("tape length fits in u32");
        self.nodes.push(Node { value, op });
        Var { tape: self.id, index }
    }

    /// Appends an operation output. `tracked` says whether any input
    /// requires gradients; if not, the backward state is discarded.
    pub(crate) fn push(
        &mut self,
        op_name: &'static str,
        shape: Vec<usize>,
        data: Vec<T>,
        op: Op<T>,
        tracked: bool,
    ) -> Result<Var> {
        if let Some(index) = first_non_finite(&data) {
            return Err(AutodiffError::NonFinite { op: op_name, index });
        }
        let mut value = Tensor::from_parts(shape, data);
        value.set_requires_grad(tracked);
        let op = if tracked { op } else { Op::Leaf };
        Ok(self.push_node(value, op))
    }

    /// Reverse sweep from a scalar `loss`. Afterwards every tracked leaf
    /// carries a gradient (zeros when the loss does not depend on it).
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.backward_done {
            return Err(AutodiffError::BackwardTwice);
        }
        let root = self.index(loss)?;
        let loss_shape = self.nodes[root].value.shape();
        if self.nodes[root].value.numel() != 1 {
            return Err(AutodiffError::NonScalarLoss(loss_shape.to_vec()));
        }
        self.backward_done = true;

        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        if self.nodes[root].value.requires_grad() {
            grads[root] = Some(vec![T::one()]);
        }
        for i in (0..=root).rev() {
            let Some(g) = grads[i].take() else { continue };
            if matches!(self.nodes[i].op, Op::Leaf) {
                grads[i] = Some(g);
                continue;
            }
            let mut ctx = BackCtx { nodes: &self.nodes[..i], grads: &mut grads[..i] };
            backward_node(&self.nodes[i], &g, &mut ctx);
        }

        for (i, node) in self.nodes.iter_mut().enumerate() {
            if matches!(node.op, Op::Leaf) && node.value.requires_grad() {
                let g = grads[i].take().unwrap_or_else(|| vec![T::zero(); node.value.numel()]);
                if let Some(index) = first_non_finite(&g) {
                    return Err(AutodiffError::NonFinite { op: "backward", index });
                }
                node.value.set_grad(g);
            }
        }
        Ok(())
    }
}

/// View of the tape below the node being differentiated.
pub(crate) struct BackCtx<'a, T> {
    nodes: &'a [Node<T>],
    grads: &'a mut [Option<Vec<T>>],
}

impl<'a, T: Scalar> BackCtx<'a, T> {
    pub fn value(&self, v: Var) -> &'a Tensor<T> {
        &self.nodes[v.index()].value
    }

    pub fn needs(&self, v: Var) -> bool {
        self.nodes[v.index()].value.requires_grad()
    }

    /// Lets `f` add its contribution into the gradient buffer of `v`,
    /// creating a zeroed buffer on first use. No-op for untracked inputs.
    pub fn accumulate(&mut self, v: Var, f: impl FnOnce(&mut [T])) {
        if !self.needs(v) {
            return;
        }
        let n = self.nodes[v.index()].value.numel();
        let buf = self.grads[v.index()].get_or_insert_with(|| vec![T::zero(); n]);
        f(buf);
    }

    pub fn add_into(&mut self, v: Var, contrib: &[T]) {
        self.accumulate(v, |g| {
            for (a, &b) in g.iter_mut().zip(contrib) {
                *a += b;
            }
        });
    }
}

fn backward_node<T: Scalar>(node: &Node<T>, g: &[T], ctx: &mut BackCtx<'_, T>) {
    let out = &node.value;
    match &node.op {
        Op::Leaf => {}
        Op::Conv2d { input, weight, bias, geom } => {
            conv::conv2d_backward(ctx, g, *input, *weight, *bias, geom)
        }
        Op::GroupNorm { x, gamma, beta, stats } => {
            norm::norm_backward(ctx, g, *x, *gamma, *beta, stats)
        }
        Op::LayerNorm { x, gamma, beta, stats } => {
            norm::norm_backward(ctx, g, *x, *gamma, *beta, stats)
        }
        Op::Relu { x } => activation::relu_backward(ctx, g, *x),
        Op::MaxPool { x, argmax } => pool::max_pool_backward(ctx, g, *x, argmax),
        Op::AdaptiveAvgPool { x, out_h, out_w } => {
            pool::adaptive_avg_pool_backward(ctx, g, *x, *out_h, *out_w)
        }
        Op::Linear { x, weight, bias } => dense::linear_backward(ctx, g, *x, *weight, *bias),
        Op::MatMul { a, b } => dense::matmul_backward(ctx, g, *a, *b),
        Op::Transpose { x } => dense::transpose_backward(ctx, g, *x),
        Op::Softmax { x } => activation::softmax_backward(ctx, g, *x, out),
        Op::Scale { x, factor } => {
            let f = *factor;
            ctx.accumulate(*x, |acc| {
                for (a, &d) in acc.iter_mut().zip(g) {
                    *a += d * f;
                }
            });
        }
        Op::Add { a, b } => {
            ctx.add_into(*a, g);
            ctx.add_into(*b, g);
        }
        Op::Mul { a, b } => {
            let (av, bv) = (ctx.value(*a).data(), ctx.value(*b).data());
            ctx.accumulate(*a, |acc| {
                for ((s, &d), &y) in acc.iter_mut().zip(g).zip(bv) {
                    *s += d * y;
                }
            });
            ctx.accumulate(*b, |acc| {
                for ((s, &d), &y) in acc.iter_mut().zip(g).zip(av) {
                    *s += d * y;
                }
            });
        }
        Op::Sum { x } => {
            let d = g[0];
            ctx.accumulate(*x, |acc| acc.iter_mut().for_each(|a| *a += d));
        }
        Op::MeanRows { x } => dense::mean_rows_backward(ctx, g, *x),
        Op::Reshape { x } => ctx.add_into(*x, g),
        Op::SliceCols { x, start } => dense::slice_cols_backward(ctx, g, *x, *start, out.shape()[1]),
        Op::ConcatCols { parts } => dense::concat_cols_backward(ctx, g, parts),
        Op::GatherRows { x, index } => dense::gather_rows_backward(ctx, g, *x, index),
        Op::CrossEntropy { y, target, mode, clamp } => {
            loss::cross_entropy_backward(ctx, g[0], *y, target, *mode, *clamp)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_gradient_is_ones() {
        let mut tape = Tape::<f64>::new();
        let x = tape.param(Tensor::new(vec![3], vec![1.0, -2.0, 0.5]).unwrap());
        let s = tape.sum(x).unwrap();
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn square_gradient_is_two_x() {
        let mut tape = Tape::<f64>::new();
        let data = vec![1.0, -2.0, 0.5, 3.0];
        let x = tape.param(Tensor::new(vec![2, 2], data.clone()).unwrap());
        let sq = tape.mul(x, x).unwrap();
        let s = tape.sum(sq).unwrap();
        tape.backward(s).unwrap();
        let expect: Vec<f64> = data.iter().map(|v| 2.0 * v).collect();
        assert_eq!(tape.grad(x).unwrap(), expect.as_slice());
    }

    #[test]
    fn double_backward_is_an_error() {
        let mut tape = Tape::<f32>::new();
        let x = tape.param(Tensor::ones(vec![2]).unwrap());
        let s = tape.sum(x).unwrap();
        tape.backward(s).unwrap();
        assert_eq!(tape.backward(s), Err(AutodiffError::BackwardTwice));
    }

    #[test]
    fn unused_parameter_gets_zero_gradient() {
        let mut tape = Tape::<f32>::new();
        let x = tape.param(Tensor::ones(vec![2]).unwrap());
        let unused = tape.param(Tensor::ones(vec![3]).unwrap());
        let s = tape.sum(x).unwrap();
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(unused).unwrap(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn foreign_var_rejected() {
        let mut a = Tape::<f32>::new();
        let mut b = Tape::<f32>::new();
        let x = a.param(Tensor::ones(vec![1]).unwrap());
        let _ = b.param(Tensor::ones(vec![1]).unwrap());
        assert_eq!(b.sum(x).unwrap_err(), AutodiffError::ForeignVar);
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut tape = Tape::<f32>::new();
        let x = tape.param(Tensor::ones(vec![2]).unwrap());
        assert!(matches!(tape.backward(x), Err(AutodiffError::NonScalarLoss(_))));
    }

    #[test]
    fn untracked_ops_store_no_backward_state() {
        let mut tape = Tape::<f32>::new();
        let x = tape.constant(Tensor::ones(vec![2]).unwrap());
        let y = tape.scale(x, 2.0).unwrap();
        assert!(!tape.value(y).requires_grad());
        assert!(matches!(tape.nodes[y.index()].op, Op::Leaf));
    }
}
