use crate::error::{shape_err, AutodiffError, Result};
use crate::scalar::Scalar;
use crate::tape::{BackCtx, Op, Tape, Var};
use crate::Tensor;

/// Probability clamp applied before taking logarithms.
pub const PROB_CLAMP: f64 = 1e-7;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub enum LossMode {
    /// `-(1/N) ΣΣ [T log Y + (1-T) log(1-Y)]`: a binary cross-entropy
    /// summed over every class output, averaged over samples.
    #[default]
    SummedBinary,
    /// Standard categorical cross-entropy `-(1/N) ΣΣ T log Y`.
    Categorical,
}

fn clamp<T: Scalar>(y: T, eps: T) -> T {
    y.max(eps).min(T::one() - eps)
}

impl<T: Scalar> Tape<T> {
    /// Cross-entropy between predicted probabilities `y [N,K]` and targets
    /// `target [N,K]`. With `strict`, every target row must be one-hot.
    pub fn cross_entropy(&mut self, y: Var, target: &Tensor<T>, mode: LossMode, strict: bool) -> Result<Var> {
        let tracked = self.checked(&[y])?;
        let ys = self.shape(y);
        if ys.len() != 2 || ys != target.shape() {
            return Err(shape_err("cross_entropy", format!("predictions {ys:?} vs targets {:?}", target.shape())));
        }
        let (n, k) = (ys[0], ys[1]);
        if strict {
            for (row, t) in target.data().chunks_exact(k).enumerate() {
                let ones = t.iter().filter(|&&v| v == T::one()).count();
                let zeros = t.iter().filter(|&&v| v == T::zero()).count();
                if ones != 1 || zeros != k - 1 {
                    return Err(AutodiffError::NotOneHot { row });
                }
            }
        }
        let eps = T::of(PROB_CLAMP);
        let mut total = T::zero();
        for (&p, &t) in self.value(y).data().iter().zip(target.data()) {
            let p = clamp(p, eps);
            total += match mode {
                LossMode::SummedBinary => t * p.ln() + (T::one() - t) * (T::one() - p).ln(),
                LossMode::Categorical => t * p.ln(),
            };
        }
        let loss = -total / T::of(n as f64);
        let op = Op::CrossEntropy { y, target: target.data().to_vec(), mode, clamp: eps };
        self.push("cross_entropy", vec![1], vec![loss], op, tracked)
    }
}

pub(crate) fn cross_entropy_backward<T: Scalar>(
    ctx: &mut BackCtx<'_, T>,
    g: T,
    y: Var,
    target: &[T],
    mode: LossMode,
    eps: T,
) {
    let yv = ctx.value(y);
    let n = T::of(yv.shape()[0] as f64);
    ctx.accumulate(y, |dy| {
        for ((a, &p), &t) in dy.iter_mut().zip(yv.data()).zip(target) {
            if p < eps || p > T::one() - eps {
                // clamped: locally constant
                continue;
            }
            let d = match mode {
                LossMode::SummedBinary => -t / p + (T::one() - t) / (T::one() - p),
                LossMode::Categorical => -t / p,
            };
            *a += g * d / n;
        }
    });
}

#[cfg(test)]
mod tests {
    use super::*;

    fn loss(y: Vec<f64>, t: Vec<f64>, k: usize, mode: LossMode) -> f64 {
        let mut tape = Tape::<f64>::new();
        let n = y.len() / k;
        let yv = tape.constant(Tensor::new(vec![n, k], y).unwrap());
        let target = Tensor::new(vec![n, k], t).unwrap();
        let l = tape.cross_entropy(yv, &target, mode, true).unwrap();
        tape.value(l).data()[0]
    }

    #[test]
    fn hand_evaluated_summed_binary() {
        let l = loss(vec![0.5, 0.5], vec![1.0, 0.0], 2, LossMode::SummedBinary);
        assert!((l - 1.3862943611198906).abs() < 1e-12, "{l}");
    }

    #[test]
    fn perfect_prediction_near_zero() {
        let t = vec![0.0, 1.0, 0.0, 1.0, 0.0, 0.0];
        let l = loss(t.clone(), t, 3, LossMode::SummedBinary);
        // K·eps per sample, averaged
        assert!(l > 0.0 && l <= 3.0 * 1.1e-7, "{l}");
    }

    #[test]
    fn categorical_mode() {
        let l = loss(vec![0.25, 0.75], vec![0.0, 1.0], 2, LossMode::Categorical);
        assert!((l + 0.75f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn strict_rejects_soft_targets() {
        let mut tape = Tape::<f64>::new();
        let y = tape.constant(Tensor::new(vec![1, 2], vec![0.5, 0.5]).unwrap());
        let t = Tensor::new(vec![1, 2], vec![0.5, 0.5]).unwrap();
        assert_eq!(
            tape.cross_entropy(y, &t, LossMode::SummedBinary, true).unwrap_err(),
            AutodiffError::NotOneHot { row: 0 }
        );
        assert!(tape.cross_entropy(y, &t, LossMode::SummedBinary, false).is_ok());
    }

    #[test]
    fn shape_mismatch() {
        let mut tape = Tape::<f64>::new();
        let y = tape.constant(Tensor::new(vec![1, 2], vec![0.5, 0.5]).unwrap());
        let t = Tensor::new(vec![1, 3], vec![1.0, 0.0, 0.0]).unwrap();
        assert!(tape.cross_entropy(y, &t, LossMode::SummedBinary, true).is_err());
    }
}
