//! Scaled dot-product and multi-head self-attention, composed from the
//! primitive tape operations so their gradients come for free.

use crate::error::{shape_err, AutodiffError, Result};
use crate::scalar::Scalar;
use crate::tape::{Tape, Var};

/// Result of [`Tape::scaled_dot_attention`].
#[derive(Clone, Copy, Debug)]
pub struct Attention {
    /// `[L, dv]`
    pub output: Var,
    /// Row-stochastic attention matrix `[L, L]`.
    pub weights: Var,
}

/// Projection parameters of one multi-head attention block.
///
/// Weights are `[in, out]` like [`Tape::linear`]. Queries/keys project to
/// `qk_dim` columns and values to `v_dim` columns; each is split evenly
/// across heads. The concatenated head outputs `[H_1, …, H_h]` are combined
/// by `out_weight [v_dim, d_out]`.
#[derive(Clone, Copy, Debug)]
pub struct MhaVars {
    pub q_weight: Var,
    pub q_bias: Var,
    pub k_weight: Var,
    pub k_bias: Var,
    pub v_weight: Var,
    pub v_bias: Var,
    pub out_weight: Var,
    pub out_bias: Var,
}

impl<T: Scalar> Tape<T> {
    /// `softmax(Q Kᵀ / sqrt(dk)) V` for `Q, K [L, dk]` and `V [L, dv]`.
    pub fn scaled_dot_attention(&mut self, q: Var, k: Var, v: Var) -> Result<Attention> {
        let (qs, ks, vs) = (self.shape(q).to_vec(), self.shape(k).to_vec(), self.shape(v).to_vec());
        if qs.len() != 2 || ks.len() != 2 || vs.len() != 2 {
            return Err(shape_err("scaled_dot_attention", "Q, K and V must be matrices"));
        }
        if qs[1] != ks[1] {
            return Err(shape_err("scaled_dot_attention", format!("Q {qs:?} and K {ks:?} differ in dk")));
        }
        if ks[0] != vs[0] {
            return Err(shape_err("scaled_dot_attention", format!("K {ks:?} and V {vs:?} differ in length")));
        }
        let kt = self.transpose(k)?;
        let logits = self.matmul(q, kt)?;
        let scaled = self.scale(logits, T::one() / T::of(qs[1] as f64).sqrt())?;
        let weights = self.softmax(scaled)?;
        let output = self.matmul(weights, v)?;
        Ok(Attention { output, weights })
    }

    /// Multi-head self-attention over the token matrix `x [L, D]`.
    pub fn multi_head_attention(&mut self, x: Var, p: &MhaVars, heads: usize) -> Result<Var> {
        let q = self.linear(x, p.q_weight, p.q_bias)?;
        let k = self.linear(x, p.k_weight, p.k_bias)?;
        let v = self.linear(x, p.v_weight, p.v_bias)?;
        let (qk_dim, v_dim) = (self.shape(q)[1], self.shape(v)[1]);
        if self.shape(k)[1] != qk_dim {
            return Err(shape_err("multi_head_attention", "query and key widths differ"));
        }
        if heads == 0 || qk_dim % heads != 0 || v_dim % heads != 0 {
            return Err(AutodiffError::InvalidArgument {
                op: "multi_head_attention",
                detail: format!("widths {qk_dim}/{v_dim} not divisible by {heads} heads"),
            });
        }
        let (dq, dv) = (qk_dim / heads, v_dim / heads);
        let mut outs = Vec::with_capacity(heads);
        for h in 0..heads {
            let qh = self.slice_cols(q, h * dq, dq)?;
            let kh = self.slice_cols(k, h * dq, dq)?;
            let vh = self.slice_cols(v, h * dv, dv)?;
            outs.push(self.scaled_dot_attention(qh, kh, vh)?.output);
        }
        let joined = if heads == 1 { outs[0] } else { self.concat_cols(&outs)? };
        self.linear(joined, p.out_weight, p.out_bias)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Tensor;

    #[test]
    fn zero_queries_average_values() {
        let mut tape = Tape::<f64>::new();
        let q = tape.constant(Tensor::zeros(vec![3, 4]).unwrap());
        let k = tape.constant(Tensor::from_fn(vec![3, 4], |i| (i as f64).cos()).unwrap());
        let v = tape.constant(Tensor::new(vec![3, 2], vec![1.0, 2.0, 3.0, 4.0, 5.0, 9.0]).unwrap());
        let att = tape.scaled_dot_attention(q, k, v).unwrap();
        for row in tape.value(att.output).data().chunks(2) {
            assert!((row[0] - 3.0).abs() < 1e-12 && (row[1] - 5.0).abs() < 1e-12);
        }
    }

    #[test]
    fn single_token_returns_value() {
        let mut tape = Tape::<f64>::new();
        let q = tape.constant(Tensor::new(vec![1, 2], vec![0.3, -1.0]).unwrap());
        let k = tape.constant(Tensor::new(vec![1, 2], vec![2.0, 0.5]).unwrap());
        let v = tape.constant(Tensor::new(vec![1, 3], vec![7.0, -2.0, 0.25]).unwrap());
        let att = tape.scaled_dot_attention(q, k, v).unwrap();
        assert_eq!(tape.value(att.output).data(), &[7.0, -2.0, 0.25]);
    }

    #[test]
    fn mismatched_dk() {
        let mut tape = Tape::<f64>::new();
        let q = tape.constant(Tensor::zeros(vec![2, 3]).unwrap());
        let k = tape.constant(Tensor::zeros(vec![2, 4]).unwrap());
        let v = tape.constant(Tensor::zeros(vec![2, 4]).unwrap());
        assert!(tape.scaled_dot_attention(q, k, v).is_err());
    }
}
