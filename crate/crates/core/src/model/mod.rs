//! The verification network: convolution blocks, grid pooling into a token
//! sequence, multi-head self-attention, layer norm, token mean, classifier.

mod checkpoint;
mod forward;

use std::collections::BTreeMap;

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use veinatn_autodiff::{LossMode, Scalar, Tensor};

pub use checkpoint::{checksum, decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, Checkpoint, TrainMeta};
pub use forward::{bind_params, forward, layer_shapes, predict, LayerShape};

use crate::error::{Error, Result};
use crate::seed;

pub const IN_CHANNELS: usize = 3;
pub const MAX_BLOCKS: usize = 5;
pub const NORM_EPS: f64 = 1e-5;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossKind {
    /// Per-class binary cross-entropy summed over classes.
    #[default]
    SummedBinary,
    Categorical,
}

impl From<LossKind> for LossMode {
    fn from(k: LossKind) -> Self {
        match k {
            LossKind::SummedBinary => LossMode::SummedBinary,
            LossKind::Categorical => LossMode::Categorical,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub blocks: usize,
    pub filters: usize,
    pub kernel_sizes: Vec<usize>,
    pub groups: usize,
    pub pool_grid: usize,
    pub heads: usize,
    /// Total query/key width across all heads.
    pub qk_dim: usize,
    /// Total value width across all heads.
    pub v_dim: usize,
    pub num_classes: usize,
    #[serde(default)]
    pub loss: LossKind,
    /// Adds the token sequence back onto the attention output.
    #[serde(default)]
    pub residual: bool,
}

impl ModelConfig {
    pub fn new(num_classes: usize) -> Self {
        Self {
            blocks: 3,
            filters: 32,
            kernel_sizes: vec![7, 5, 3],
            groups: 8,
            pool_grid: 7,
            heads: 4,
            qk_dim: 64,
            v_dim: 64,
            num_classes,
            loss: LossKind::default(),
            residual: false,
        }
    }

    /// Sets the depth; kernel sizes follow 7, 5, 3, 3, 3.
    pub fn with_blocks(mut self, blocks: usize) -> Self {
        self.blocks = blocks;
        self.kernel_sizes = (0..blocks).map(|i| [7, 5, 3].get(i).copied().unwrap_or(3)).collect();
        self
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if !(1..=MAX_BLOCKS).contains(&self.blocks) {
            return fail(format!("blocks must be in 1..={MAX_BLOCKS}, got {}", self.blocks));
        }
        if self.kernel_sizes.len() != self.blocks {
            return fail(format!("{} kernel sizes for {} blocks", self.kernel_sizes.len(), self.blocks));
        }
        if let Some(k) = self.kernel_sizes.iter().find(|&&k| k == 0 || k % 2 == 0) {
            return fail(format!("kernel size {k} is not odd; same padding needs odd kernels"));
        }
        if self.filters == 0 || self.groups == 0 || self.filters % self.groups != 0 {
            return fail(format!("{} filters not divisible into {} groups", self.filters, self.groups));
        }
        if self.heads == 0 {
            return fail("heads must be positive".into());
        }
        for (name, d) in [("qk_dim", self.qk_dim), ("v_dim", self.v_dim)] {
            if d == 0 || d % self.heads != 0 {
                return fail(format!("{name} {d} not divisible by {} heads", self.heads));
            }
        }
        if self.pool_grid == 0 {
            return fail("pool_grid must be positive".into());
        }
        if self.num_classes == 0 {
            return fail("num_classes must be positive".into());
        }
        Ok(())
    }

    /// Smallest square input the stack accepts: every pooling stage halves
    /// the extent and the final map must cover the token grid.
    pub fn min_input(&self) -> usize {
        self.pool_grid << self.blocks
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Init {
    HeNormal { fan_in: usize },
    Zeros,
    Ones,
}

/// Every learnable tensor as `(name, shape)`, in architecture order.
pub fn param_shapes(config: &ModelConfig) -> Vec<(String, Vec<usize>)> {
    param_specs(config).into_iter().map(|(n, s, _)| (n, s)).collect()
}

fn param_specs(config: &ModelConfig) -> Vec<(String, Vec<usize>, Init)> {
    let f = config.filters;
    let mut specs = Vec::new();
    let mut cin = IN_CHANNELS;
    for (b, &k) in config.kernel_sizes.iter().enumerate() {
        let p = format!("block{}", b + 1);
        specs.push((format!("{p}.conv.weight"), vec![f, cin, k, k], Init::HeNormal { fan_in: cin * k * k }));
        specs.push((format!("{p}.conv.bias"), vec![f], Init::Zeros));
        specs.push((format!("{p}.gn.gamma"), vec![f], Init::Ones));
        specs.push((format!("{p}.gn.beta"), vec![f], Init::Zeros));
        cin = f;
    }
    for (proj, din, dout) in [("q", f, config.qk_dim), ("k", f, config.qk_dim), ("v", f, config.v_dim), ("out", config.v_dim, f)] {
        specs.push((format!("mha.{proj}.weight"), vec![din, dout], Init::HeNormal { fan_in: din }));
        specs.push((format!("mha.{proj}.bias"), vec![dout], Init::Zeros));
    }
    specs.push(("ln.gamma".into(), vec![f], Init::Ones));
    specs.push(("ln.beta".into(), vec![f], Init::Zeros));
    specs.push(("classifier.weight".into(), vec![f, config.num_classes], Init::HeNormal { fan_in: f }));
    specs.push(("classifier.bias".into(), vec![config.num_classes], Init::Zeros));
    specs
}

/// Named learnable tensors of one network.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams<T = f32> {
    tensors: BTreeMap<String, Tensor<T>>,
}

impl<T: Scalar> ModelParams<T> {
    /// Accepts the map only if it holds exactly the tensors `config` needs.
    pub fn from_map(config: &ModelConfig, tensors: BTreeMap<String, Tensor<T>>) -> Result<Self> {
        let expected = param_shapes(config);
        if expected.len() != tensors.len() {
            return Err(Error::Config(format!("expected {} parameter tensors, got {}", expected.len(), tensors.len())));
        }
        for (name, shape) in &expected {
            match tensors.get(name) {
                None => return Err(Error::Config(format!("missing parameter `{name}`"))),
                Some(t) if t.shape() != shape.as_slice() => {
                    return Err(Error::Config(format!("parameter `{name}` has shape {:?}, expected {shape:?}", t.shape())))
                }
                Some(_) => {}
            }
        }
        Ok(Self { tensors })
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.tensors.get_mut(name)
    }

    /// Name-ordered iteration.
    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    /// Mutable tensors for `names`, which must be listed in name order.
    pub fn tensors_mut(&mut self, names: &[String]) -> Vec<&mut Tensor<T>> {
        self.tensors.iter_mut().filter(|(n, _)| names.binary_search(n).is_ok()).map(|(_, t)| t).collect()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    pub fn count(&self) -> usize {
        self.tensors.values().map(Tensor::numel).sum()
    }

    pub fn cast<U: Scalar>(&self) -> ModelParams<U> {
        ModelParams { tensors: self.tensors.iter().map(|(k, v)| (k.clone(), v.cast())).collect() }
    }
}

/// He-normal weights (`std = sqrt(2 / fan_in)`), zero biases and shifts,
/// unit scales.
pub fn init_model(config: &ModelConfig, seed: u64) -> Result<ModelParams> {
    config.validate()?;
    let mut rng = seed::rng(&[seed, 0x1417]);
    let tensors = param_specs(config)
        .into_iter()
        .map(|(name, shape, init)| {
            let t = init_tensor(shape, init, &mut rng);
            (name, t)
        })
        .collect();
    Ok(ModelParams { tensors })
}

fn init_tensor(shape: Vec<usize>, init: Init, rng: &mut impl rand::Rng) -> Tensor<f32> {
    match init {
        Init::Zeros => Tensor::zeros(shape),
        Init::Ones => Tensor::ones(shape),
        Init::HeNormal { fan_in } => {
            let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive std");
            Tensor::from_fn(shape, |_| normal.sample(rng) as f32)
        }
    }
    .expect("shapes from a validated config")
}

/// Number of scalar learnables implied by `config`.
pub fn count_params(config: &ModelConfig) -> usize {
    param_shapes(config).iter().map(|(_, s)| s.iter().product::<usize>()).sum()
}

/// Re-initializes the classifier for `num_classes` outputs; every other
/// tensor is kept.
pub fn reshape_head(
    config: &ModelConfig,
    params: &ModelParams,
    num_classes: usize,
    seed: u64,
) -> Result<(ModelConfig, ModelParams)> {
    if num_classes == 0 {
        return Err(Error::Config("class count must be positive".into()));
    }
    let new_config = ModelConfig { num_classes, ..config.clone() };
    let mut rng = seed::rng(&[seed, 0x4ead]);
    let mut tensors = params.tensors.clone();
    for (name, shape, init) in param_specs(&new_config) {
        if name.starts_with("classifier.") {
            tensors.insert(name, init_tensor(shape, init, &mut rng));
        }
    }
    let params = ModelParams::from_map(&new_config, tensors)?;
    Ok((new_config, params))
}
