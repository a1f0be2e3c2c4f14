#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use veinatn_autodiff::gradcheck::{central_difference, max_relative_error, STEP};
use veinatn_autodiff::{Tape, Tensor, Var};

pub const SEEDS: [u64; 5] = [1, 2, 3, 4, 5];

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

/// Values bounded away from zero, for kinks at the origin.
pub fn away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let m = rng.random_range(0.05..1.0);
            if rng.random_bool(0.5) { m } else { -m }
        })
        .collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// Distinct values (spacing 0.01) in random order, so window maxima are
/// unique and stable under small perturbations.
pub fn distinct(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let mut vals: Vec<f64> = (0..n).map(|i| i as f64 * 0.01).collect();
    for i in (1..n).rev() {
        let j = rng.random_range(0..=i);
        vals.swap(i, j);
    }
    Tensor::new(shape.to_vec(), vals).unwrap()
}

/// Builds `out = op(inputs)` on a fresh tape and reduces it with fixed
/// random weights to a scalar, so every output element matters.
fn weighted_loss<F>(op: &F, inputs: &[Tensor<f64>], weights: &[f64], track: bool) -> (Tape<f64>, Vec<Var>, Var)
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Var,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs
        .iter()
        .map(|t| if track { tape.param(t.clone()) } else { tape.constant(t.clone()) })
        .collect();
    let out = op(&mut tape, &vars);
    let w = tape.constant(Tensor::new(tape.shape(out).to_vec(), weights.to_vec()).unwrap());
    let prod = tape.mul(out, w).unwrap();
    let loss = tape.sum(prod).unwrap();
    (tape, vars, loss)
}

/// Max relative error between backward and central differences over every
/// element of every input listed in `check`.
pub fn gradient_error<F>(op: F, inputs: Vec<Tensor<f64>>, check: &[usize], seed: u64) -> f64
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Var,
{
    let out_len = {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
        let out = op(&mut tape, &vars);
        tape.value(out).numel()
    };
    let mut r = rng(seed ^ 0xfeed);
    let weights: Vec<f64> = (0..out_len).map(|_| r.random_range(-1.0..1.0)).collect();

    let (mut tape, vars, loss) = weighted_loss(&op, &inputs, &weights, true);
    tape.backward(loss).unwrap();

    let mut worst: f64 = 0.0;
    for &which in check {
        let analytic = tape.grad(vars[which]).unwrap().to_vec();
        let base = inputs[which].data().to_vec();
        let idx: Vec<usize> = (0..base.len()).collect();
        let numeric = central_difference(
            |x| {
                let mut probe = inputs.clone();
                probe[which] = Tensor::new(inputs[which].shape().to_vec(), x.to_vec()).unwrap();
                let (t, _, l) = weighted_loss(&op, &probe, &weights, false);
                t.value(l).data()[0]
            },
            &base,
            &idx,
            STEP,
        );
        worst = worst.max(max_relative_error(&analytic, &numeric, 1e-6));
    }
    worst
}
