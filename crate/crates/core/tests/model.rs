use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use veinatn_autodiff::gradcheck::{relative_error, smooth_central_difference, STEP};
use veinatn_autodiff::{LossMode, Tape, Tensor};

use veinatn::image::{to_network_input, GrayImage, NETWORK_SIZE};
use veinatn::model::{
    bind_params, count_params, forward, init_model, layer_shapes, param_shapes, predict, reshape_head, ModelConfig,
    ModelParams, MAX_BLOCKS,
};

const SEEDS: [u64; 5] = [1, 2, 3, 4, 5];

fn loss_f64(config: &ModelConfig, params: &ModelParams<f64>, x: &Tensor<f64>, class: usize, track: bool) -> (Tape<f64>, BTreeMap<String, veinatn_autodiff::Var>, f64) {
    let mut tape = Tape::new();
    let vars = bind_params(&mut tape, params, |_| track);
    let xv = tape.constant(x.clone());
    let p = forward(&mut tape, config, &vars, xv, None).unwrap();
    let target = Tensor::from_fn(vec![1, config.num_classes], |i| if i == class { 1.0 } else { 0.0 }).unwrap();
    let loss = tape.cross_entropy(p, &target, LossMode::from(config.loss), true).unwrap();
    let value = tape.value(loss).data()[0];
    if track {
        tape.backward(loss).unwrap();
    }
    (tape, vars, value)
}

/// Relative gap between central differences at two steps above which an entry is taken
/// to straddle a ReLU or max-pool switch.
const KINK_TOL: f64 = 1e-4;

/// Analytic gradient of the full network against central differences on a
/// sample of entries from every parameter tensor. Entries whose step
/// straddles a kink are counted in `kinks` instead of compared.
fn network_gradient_error(seed: u64, replicated: bool, checked: &mut usize, kinks: &mut usize) -> f64 {
    let config = ModelConfig::new(5).with_blocks(2);
    let mut params: ModelParams<f64> = init_model(&config, seed).unwrap().cast();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for name in param_shapes(&config).into_iter().map(|(n, _)| n) {
        if name.ends_with("bias") || name.ends_with("beta") {
            let t = params.get_mut(&name).unwrap();
            *t = Tensor::from_fn(t.shape().to_vec(), |_| rng.random_range(-0.1..0.1)).unwrap();
        }
    }
    let side = config.min_input();
    let plane: Vec<f64> = (0..side * side).map(|_| rng.random_range(0.0..1.0)).collect();
    let data: Vec<f64> =
        (0..3).flat_map(|c| plane.iter().map(move |&v| if replicated || c == 0 { v } else { (v * 1.7 + 0.1 * c as f64) % 1.0 })).collect();
    let x = Tensor::new(vec![1, 3, side, side], data).unwrap();
    let class = rng.random_range(0..config.num_classes);

    let (tape, vars, _) = loss_f64(&config, &params, &x, class, true);
    let mut worst: f64 = 0.0;
    for (name, shape) in param_shapes(&config) {
        let n: usize = shape.iter().product();
        let analytic = tape.grad(vars[&name]).unwrap().to_vec();
        let idx: Vec<usize> = (0..4).map(|_| rng.random_range(0..n)).collect();
        let base = params.get(&name).unwrap().data().to_vec();
        let numeric = smooth_central_difference(
            |v| {
                let mut p = params.clone();
                *p.get_mut(&name).unwrap() = Tensor::new(shape.clone(), v.to_vec()).unwrap();
                loss_f64(&config, &p, &x, class, false).2
            },
            &base,
            &idx,
            STEP,
            KINK_TOL,
        );
        for (&i, num) in idx.iter().zip(numeric) {
            match num {
                Some(num) => worst = worst.max(relative_error(analytic[i], num, 1e-6)),
                None => *kinks += 1,
            }
            *checked += 1;
        }
    }
    worst
}

#[test]
fn full_network_gradient_matches_finite_differences() {
    let (mut checked, mut kinks) = (0, 0);
    for seed in SEEDS {
        for replicated in [true, false] {
            let err = network_gradient_error(seed, replicated, &mut checked, &mut kinks);
            assert!(err < 1e-3, "seed {seed} replicated {replicated}: {err}");
        }
    }
    assert!(kinks * 20 < checked, "{kinks} of {checked} entries straddle a kink");
}

#[test]
fn default_architecture_and_parameter_count() {
    let config = ModelConfig::new(300);
    let shapes: BTreeMap<_, _> = param_shapes(&config).into_iter().collect();
    assert_eq!(shapes["block1.conv.weight"], [32, 3, 7, 7]);
    assert_eq!(shapes["block2.conv.weight"], [32, 32, 5, 5]);
    assert_eq!(shapes["block3.conv.weight"], [32, 32, 3, 3]);
    assert_eq!(config.heads, 4);
    assert_eq!(config.qk_dim, 64);
    let total = count_params(&config);
    assert_eq!(total, 58_188);
    assert!((40_000..=80_000).contains(&total));
    assert_eq!(init_model(&config, 0).unwrap().count(), total);
}

#[test]
fn parameter_count_grows_with_depth() {
    let counts: Vec<usize> = (1..=MAX_BLOCKS).map(|d| count_params(&ModelConfig::new(300).with_blocks(d))).collect();
    assert!(counts.windows(2).all(|w| w[0] < w[1]), "{counts:?}");
}

#[test]
fn stage_shapes_for_network_input() {
    let config = ModelConfig::new(10);
    let params = init_model(&config, 1).unwrap();
    let stages: BTreeMap<_, _> =
        layer_shapes(&config, &params, NETWORK_SIZE).unwrap().into_iter().map(|l| (l.name, l.shape)).collect();
    assert_eq!(stages["block1"], [1, 32, 112, 112]);
    assert_eq!(stages["block2"], [1, 32, 56, 56]);
    assert_eq!(stages["block3"], [1, 32, 28, 28]);
    assert_eq!(stages["grid_pool"], [1, 32, 7, 7]);
    assert_eq!(stages["tokens"], [49, 32]);
    assert_eq!(stages["attention"], [49, 32]);
    assert_eq!(stages["probabilities"], [1, 10]);
}

#[test]
fn probabilities_form_a_distribution() {
    let config = ModelConfig::new(12);
    for seed in 0..3 {
        let params = init_model(&config, seed).unwrap();
        let img = GrayImage::from_fn(80, 60, |x, y| ((x * y + seed as usize * 31) % 256) as u8).unwrap();
        let p = predict(&config, &params, &to_network_input(&img)).unwrap();
        assert_eq!(p.len(), 12);
        assert!(p.iter().all(|&v| v > 0.0 && v < 1.0));
        assert!((p.iter().sum::<f32>() - 1.0).abs() < 1e-5);
    }
}

#[test]
fn every_parameter_receives_gradient() {
    let config = ModelConfig::new(4);
    let params: ModelParams<f64> = init_model(&config, 7).unwrap().cast();
    let side = config.min_input();
    let x = Tensor::from_fn(vec![1, 3, side, side], |i| ((i * 37) % 101) as f64 / 101.0).unwrap();
    let (tape, vars, _) = loss_f64(&config, &params, &x, 2, true);
    for (name, var) in &vars {
        let g = tape.grad(*var).unwrap();
        assert!(g.iter().all(|v| v.is_finite()), "{name}");
        assert!(g.iter().any(|&v| v != 0.0), "{name} has an all-zero gradient");
    }
}

#[test]
fn replicated_and_plain_first_layer_paths_agree() {
    let config = ModelConfig::new(6).with_blocks(1);
    let params: ModelParams<f64> = init_model(&config, 3).unwrap().cast();
    let side = config.min_input();
    let plane: Vec<f64> = (0..side * side).map(|i| ((i * 13) % 29) as f64 / 29.0).collect();
    let x = Tensor::new(vec![1, 3, side, side], plane.repeat(3)).unwrap();
    let fast = loss_f64(&config, &params, &x, 1, false).2;
    // a tracked input cannot take the folded path
    let mut tape = Tape::new();
    let vars = bind_params(&mut tape, &params, |_| false);
    let xv = tape.param(x.clone());
    let p = forward(&mut tape, &config, &vars, xv, None).unwrap();
    let target = Tensor::from_fn(vec![1, 6], |i| if i == 1 { 1.0 } else { 0.0 }).unwrap();
    let loss = tape.cross_entropy(p, &target, LossMode::from(config.loss), true).unwrap();
    assert!((tape.value(loss).data()[0] - fast).abs() < 1e-12);
}

#[test]
fn reshaped_head_keeps_the_backbone() {
    let config = ModelConfig::new(300);
    let params = init_model(&config, 2).unwrap();
    let (c2, p2) = reshape_head(&config, &params, 492, 9).unwrap();
    assert_eq!(c2.num_classes, 492);
    assert_eq!(p2.get("classifier.weight").unwrap().shape(), [32, 492]);
    for (name, t) in params.iter().filter(|(n, _)| !n.starts_with("classifier.")) {
        assert_eq!(p2.get(name).unwrap(), t, "{name}");
    }
}
