//! Adam with bias correction.

use crate::error::{AutodiffError, Result};
use crate::scalar::Scalar;
use crate::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-4, beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

/// Per-parameter moment estimates. The moment buffers mirror the shapes
/// of the parameter list given to [`AdamState::new`]; `step` counts updates.
#[derive(Clone, Debug)]
pub struct AdamState<T = f32> {
    pub config: AdamConfig,
    shapes: Vec<Vec<usize>>,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
    t: u64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new<'a>(config: AdamConfig, params: impl IntoIterator<Item = &'a Tensor<T>>) -> Self {
        let shapes: Vec<Vec<usize>> = params.into_iter().map(|p| p.shape().to_vec()).collect();
        let zeros = |s: &Vec<usize>| vec![T::zero(); s.iter().product()];
        Self { config, m: shapes.iter().map(zeros).collect(), v: shapes.iter().map(zeros).collect(), shapes, t: 0 }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    pub fn first_moment(&self, i: usize) -> &[T] {
        &self.m[i]
    }

    pub fn second_moment(&self, i: usize) -> &[T] {
        &self.v[i]
    }

    /// One update of every parameter in `params` using the matching `grads`.
    pub fn step(&mut self, params: &mut [&mut Tensor<T>], grads: &[&[T]]) -> Result<()> {
        if params.len() != self.shapes.len() || grads.len() != self.shapes.len() {
            return Err(AutodiffError::Optimizer(format!(
                "state tracks {} parameters, got {} parameters and {} gradients",
                self.shapes.len(),
                params.len(),
                grads.len()
            )));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.shape() != self.shapes[i].as_slice() || g.len() != p.numel() {
                return Err(AutodiffError::Optimizer(format!(
                    "parameter {i}: state shape {:?}, parameter {:?}, gradient length {}",
                    self.shapes[i],
                    p.shape(),
                    g.len()
                )));
            }
        }
        self.t += 1;
        let c = &self.config;
        let (b1, b2) = (T::of(c.beta1), T::of(c.beta2));
        let bc1 = T::of(1.0 - c.beta1.powi(self.t as i32));
        let bc2 = T::of(1.0 - c.beta2.powi(self.t as i32));
        let (lr, eps) = (T::of(c.lr), T::of(c.epsilon));
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for (((w, &gi), mi), vi) in p.data_mut().iter_mut().zip(g.iter()).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mi = b1 * *mi + (T::one() - b1) * gi;
                *vi = b2 * *vi + (T::one() - b2) * gi * gi;
                let mhat = *mi / bc1;
                let vhat = *vi / bc2;
                *w -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
        if let Some(bad) = params.iter().find(|p| !p.all_finite()) {
            return Err(AutodiffError::Optimizer(format!("update produced non-finite values in {:?}", bad.shape())));
        }
        Ok(())
    }
}
