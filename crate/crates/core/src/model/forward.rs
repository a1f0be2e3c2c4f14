use std::collections::BTreeMap;

use veinatn_autodiff::{MhaVars, Scalar, Tape, Tensor, Var};

use super::{ModelConfig, ModelParams, IN_CHANNELS, NORM_EPS};
use crate::error::{Error, Result};

/// Activation shape after a named stage, for architecture audits.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayerShape {
    pub name: String,
    pub shape: Vec<usize>,
}

/// Places every parameter on `tape`; names for which `trainable` holds
/// become tracked leaves, the rest constants.
pub fn bind_params<T: Scalar>(
    tape: &mut Tape<T>,
    params: &ModelParams<T>,
    trainable: impl Fn(&str) -> bool,
) -> BTreeMap<String, Var> {
    params
        .iter()
        .map(|(name, t)| {
            let v = if trainable(name) { tape.param(t.clone()) } else { tape.constant(t.clone()) };
            (name.to_string(), v)
        })
        .collect()
}

/// Class probabilities `[1, num_classes]` for one image `[1, 3, H, W]`.
pub fn forward<T: Scalar>(
    tape: &mut Tape<T>,
    config: &ModelConfig,
    vars: &BTreeMap<String, Var>,
    x: Var,
    mut trace: Option<&mut Vec<LayerShape>>,
) -> Result<Var> {
    let shape = tape.shape(x).to_vec();
    let min = config.min_input();
    if shape.len() != 4 || shape[0] != 1 || shape[1] != IN_CHANNELS || shape[2] < min || shape[3] < min {
        return Err(Error::InvalidArgument(format!(
            "network input must be [1, {IN_CHANNELS}, H, W] with H, W >= {min}, got {shape:?}"
        )));
    }
    let v = |name: &str| {
        vars.get(name).copied().ok_or_else(|| Error::Config(format!("parameter `{name}` not bound")))
    };
    let mut log = |tape: &Tape<T>, name: String, var: Var| {
        if let Some(t) = trace.as_deref_mut() {
            t.push(LayerShape { name, shape: tape.shape(var).to_vec() });
        }
    };
    let eps = T::of(NORM_EPS);

    let mut h = x;
    for (b, &k) in config.kernel_sizes.iter().enumerate() {
        let p = format!("block{}", b + 1);
        let mut weight = v(&format!("{p}.conv.weight"))?;
        if b == 0 {
            if let Some(plane) = replicated_plane(tape, x) {
                // identical channels: one channel against the channel-summed kernel
                let flat = tape.reshape(weight, &[config.filters, IN_CHANNELS * k * k])?;
                let fold = tape.constant(channel_fold::<T>(k * k)?);
                let summed = tape.matmul(flat, fold)?;
                weight = tape.reshape(summed, &[config.filters, 1, k, k])?;
                h = tape.constant(plane);
            }
        }
        h = tape.conv2d(h, weight, v(&format!("{p}.conv.bias"))?, 1, k / 2)?;
        h = tape.group_norm(h, config.groups, v(&format!("{p}.gn.gamma"))?, v(&format!("{p}.gn.beta"))?, eps)?;
        h = tape.relu(h)?;
        h = tape.max_pool2d(h, 2, 2)?;
        log(tape, p, h);
    }

    let g = config.pool_grid;
    h = tape.adaptive_avg_pool(h, g, g)?;
    log(tape, "grid_pool".into(), h);
    h = tape.reshape(h, &[config.filters, g * g])?;
    let tokens = tape.transpose(h)?;
    log(tape, "tokens".into(), tokens);

    let mha = MhaVars {
        q_weight: v("mha.q.weight")?,
        q_bias: v("mha.q.bias")?,
        k_weight: v("mha.k.weight")?,
        k_bias: v("mha.k.bias")?,
        v_weight: v("mha.v.weight")?,
        v_bias: v("mha.v.bias")?,
        out_weight: v("mha.out.weight")?,
        out_bias: v("mha.out.bias")?,
    };
    let mut a = tape.multi_head_attention(tokens, &mha, config.heads)?;
    if config.residual {
        a = tape.add(a, tokens)?;
    }
    log(tape, "attention".into(), a);
    let n = tape.layer_norm(a, v("ln.gamma")?, v("ln.beta")?, eps)?;
    let pooled = tape.mean_rows(n)?;
    let logits = tape.linear(pooled, v("classifier.weight")?, v("classifier.bias")?)?;
    let probs = tape.softmax(logits)?;
    log(tape, "probabilities".into(), probs);
    Ok(probs)
}

/// The first channel as `[1, 1, H, W]` when `x` is an untracked input whose
/// channels are all equal.
fn replicated_plane<T: Scalar>(tape: &Tape<T>, x: Var) -> Option<Tensor<T>> {
    let t = tape.value(x);
    if t.requires_grad() {
        return None;
    }
    let s = t.shape();
    let plane = s[2] * s[3];
    let d = t.data();
    if d[plane..].chunks_exact(plane).any(|c| c != &d[..plane]) {
        return None;
    }
    Tensor::new(vec![1, 1, s[2], s[3]], d[..plane].to_vec()).ok()
}

/// `[C*taps, taps]` matrix summing the per-channel taps of a flattened kernel.
fn channel_fold<T: Scalar>(taps: usize) -> Result<Tensor<T>> {
    Ok(Tensor::from_fn(vec![IN_CHANNELS * taps, taps], |i| {
        if i / taps % taps == i % taps { T::one() } else { T::zero() }
    })?)
}

/// Inference without gradients.
pub fn predict(config: &ModelConfig, params: &ModelParams, x: &Tensor<f32>) -> Result<Vec<f32>> {
    let mut tape = Tape::new();
    let vars = bind_params(&mut tape, params, |_| false);
    let xv = tape.constant(x.clone());
    let p = forward(&mut tape, config, &vars, xv, None)?;
    Ok(tape.value(p).data().to_vec())
}

/// Stage shapes for an input of the given spatial extent.
pub fn layer_shapes(config: &ModelConfig, params: &ModelParams, extent: usize) -> Result<Vec<LayerShape>> {
    let mut tape = Tape::new();
    let vars = bind_params(&mut tape, params, |_| false);
    let x = tape.constant(Tensor::zeros(vec![1, IN_CHANNELS, extent, extent])?);
    let mut trace = Vec::new();
    forward(&mut tape, config, &vars, x, Some(&mut trace))?;
    Ok(trace)
}
