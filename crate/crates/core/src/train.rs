//! Mini-batch training and fine-tuning.
//!
//! Every sample is run on its own tape; the batch gradient is the mean of
//! the per-sample gradients, accumulated in batch order, followed by one
//! Adam step. Shuffling depends only on `(seed, epoch)` and each augmented
//! view on `(seed, epoch, sample)`, so a run is a pure function of its
//! inputs.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use veinatn_autodiff::{AdamConfig, AdamState, AutodiffError, Tape, Tensor};

use crate::error::{Error, Result};
use crate::image::{augment_variant, clahe, load_image, to_network_input, ClaheParams, GrayImage, AUGMENT_VARIANTS};
use crate::model::{
    bind_params, forward, init_model, predict, reshape_head, Checkpoint, LossKind, ModelConfig, ModelParams, TrainMeta,
};
use crate::protocol::Sample;
use crate::seed;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stream {
    #[default]
    Normal,
    Enhanced,
}

impl Stream {
    pub const BOTH: [Stream; 2] = [Stream::Normal, Stream::Enhanced];

    pub fn as_str(self) -> &'static str {
        match self {
            Stream::Normal => "normal",
            Stream::Enhanced => "enhanced",
        }
    }
}

impl fmt::Display for Stream {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Stream {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "normal" => Ok(Stream::Normal),
            "enhanced" => Ok(Stream::Enhanced),
            _ => Err(Error::InvalidArgument(format!("unknown stream `{s}` (expected normal or enhanced)"))),
        }
    }
}

/// Required keys of a training config file, each with an example value.
pub const REQUIRED_KEYS: [(&str, &str); 11] = [
    ("lr", "0.0001"),
    ("batch", "16"),
    ("epochs", "150"),
    ("blocks", "3"),
    ("heads", "4"),
    ("qk_dim", "64"),
    ("stream", "\"normal\""),
    ("seed", "42"),
    ("loss_mode", "\"summed-binary\""),
    ("clahe_tiles", "[8, 8]"),
    ("clahe_clip", "2.0"),
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch: usize,
    pub epochs: usize,
    pub blocks: usize,
    pub heads: usize,
    pub qk_dim: usize,
    pub stream: Stream,
    pub seed: u64,
    pub loss_mode: LossKind,
    pub clahe_tiles: [usize; 2],
    pub clahe_clip: f64,
    /// Adds the nine augmented views of every training image.
    #[serde(default = "yes")]
    pub augment: bool,
    /// Trains only the classifier.
    #[serde(default)]
    pub freeze_backbone: bool,
    #[serde(default)]
    pub residual: bool,
}

fn yes() -> bool {
    true
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            batch: 16,
            epochs: 150,
            blocks: 3,
            heads: 4,
            qk_dim: 64,
            stream: Stream::Normal,
            seed: 0,
            loss_mode: LossKind::SummedBinary,
            clahe_tiles: [8, 8],
            clahe_clip: 2.0,
            augment: true,
            freeze_backbone: false,
            residual: false,
        }
    }
}

impl TrainConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let table: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        if let Some((key, example)) = REQUIRED_KEYS.iter().find(|(k, _)| !table.contains_key(*k)) {
            return Err(Error::MissingKey { key, example });
        }
        let cfg: TrainConfig = table.try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(crate::error::io_err(path))?;
        Self::parse(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("plain fields serialize")
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("lr must be positive, got {}", self.lr)));
        }
        if self.batch == 0 || self.epochs == 0 {
            return Err(Error::Config("batch and epochs must be positive".into()));
        }
        self.clahe()?;
        Ok(())
    }

    pub fn clahe(&self) -> Result<ClaheParams> {
        let p = ClaheParams { tiles: (self.clahe_tiles[0], self.clahe_tiles[1]), clip: self.clahe_clip };
        if p.tiles.0 == 0 || p.tiles.1 == 0 || !(p.clip > 0.0) {
            return Err(Error::Config(format!("invalid CLAHE tiles {:?} / clip {}", self.clahe_tiles, self.clahe_clip)));
        }
        Ok(p)
    }

    /// Model architecture for `num_classes` identities.
    pub fn model_config(&self, num_classes: usize) -> Result<ModelConfig> {
        let mut c = ModelConfig::new(num_classes).with_blocks(self.blocks);
        c.heads = self.heads;
        c.qk_dim = self.qk_dim;
        c.loss = self.loss_mode;
        c.residual = self.residual;
        c.validate()?;
        Ok(c)
    }

    /// Enhancement used for this config's stream.
    pub fn stream_clahe(&self) -> Result<Option<ClaheParams>> {
        Ok(match self.stream {
            Stream::Normal => None,
            Stream::Enhanced => Some(self.clahe()?),
        })
    }

    fn views(&self) -> usize {
        if self.augment {
            AUGMENT_VARIANTS + 1
        } else {
            1
        }
    }
}

/// Loads a sample and applies the stream's enhancement.
pub fn load_stream_image(root: &Path, sample: &Sample, enhance: Option<ClaheParams>) -> Result<GrayImage> {
    let img = load_image(root.join(&sample.path))?;
    match enhance {
        Some(p) => clahe(&img, p),
        None => Ok(img),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    /// Training views processed, originals plus augmentations.
    pub samples: usize,
    pub train_loss: f64,
    /// Share of training views classified correctly while the epoch ran.
    pub train_accuracy: f64,
    pub val_accuracy: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub curves: Vec<EpochStats>,
}

fn argmax(p: &[f32]) -> usize {
    p.iter().enumerate().fold(0, |best, (i, &v)| if v > p[best] { i } else { best })
}

/// Top-1 accuracy over preloaded images.
pub fn accuracy(config: &ModelConfig, params: &ModelParams, images: &[(GrayImage, usize)]) -> Result<f64> {
    let mut correct = 0;
    for (img, label) in images {
        if argmax(&predict(config, params, &to_network_input(img))?) == *label {
            correct += 1;
        }
    }
    Ok(correct as f64 / images.len().max(1) as f64)
}

fn load_split(root: &Path, samples: &[Sample], enhance: Option<ClaheParams>) -> Result<Vec<(GrayImage, usize)>> {
    samples.iter().map(|s| Ok((load_stream_image(root, s, enhance)?, s.identity))).collect()
}

/// Trains from freshly initialized weights on `train`, selecting the epoch
/// with the best accuracy on `val` (the last epoch when `val` is empty).
pub fn train(
    cfg: &TrainConfig,
    num_classes: usize,
    root: &Path,
    train: &[Sample],
    val: &[Sample],
    progress: impl FnMut(&EpochStats),
) -> Result<TrainOutcome> {
    let config = cfg.model_config(num_classes)?;
    let params = init_model(&config, cfg.seed)?;
    train_from(cfg, config, params, root, train, val, progress)
}

/// Replaces the classifier for `num_classes` identities and continues
/// training from `source` on the fine-tuning split.
pub fn finetune(
    cfg: &TrainConfig,
    source: &Checkpoint,
    num_classes: usize,
    root: &Path,
    train: &[Sample],
    progress: impl FnMut(&EpochStats),
) -> Result<TrainOutcome> {
    if train.is_empty() {
        return Err(Error::Protocol("fine-tuning split is empty".into()));
    }
    let (mut config, params) = reshape_head(&source.config, &source.params, num_classes, cfg.seed)?;
    config.loss = cfg.loss_mode;
    train_from(cfg, config, params, root, train, &[], progress)
}

/// The training loop shared by [`train`] and [`finetune`].
pub fn train_from(
    cfg: &TrainConfig,
    config: ModelConfig,
    mut params: ModelParams,
    root: &Path,
    train: &[Sample],
    val: &[Sample],
    mut progress: impl FnMut(&EpochStats),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    config.validate()?;
    if train.is_empty() {
        return Err(Error::Protocol("training split is empty".into()));
    }
    if let Some(s) = train.iter().chain(val).find(|s| s.identity >= config.num_classes) {
        return Err(Error::Protocol(format!(
            "{} has identity {} but the model has {} classes",
            s.path.display(),
            s.identity,
            config.num_classes
        )));
    }
    let enhance = cfg.stream_clahe()?;
    let train_images = load_split(root, train, enhance)?;
    let val_images = load_split(root, val, enhance)?;

    let trainable: Vec<String> = params
        .names()
        .filter(|n| !cfg.freeze_backbone || n.starts_with("classifier."))
        .map(str::to_string)
        .collect();
    let mut adam = AdamState::new(
        AdamConfig { lr: cfg.lr, ..AdamConfig::default() },
        trainable.iter().map(|n| params.get(n).expect("listed name")),
    );
    let mode = config.loss.into();
    let views = cfg.views();

    let mut curves = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, usize, ModelParams)> = None;
    for epoch in 1..=cfg.epochs {
        let mut order: Vec<(usize, usize)> =
            (0..train_images.len()).flat_map(|i| (0..views).map(move |v| (i, v))).collect();
        order.shuffle(&mut seed::rng(&[cfg.seed, epoch as u64, 0x5f1e]));

        let (mut loss_sum, mut correct) = (0.0, 0usize);
        for (b, batch) in order.chunks(cfg.batch).enumerate() {
            let mut grads: BTreeMap<&str, Vec<f32>> =
                trainable.iter().map(|n| (n.as_str(), vec![0.0; params.get(n).expect("listed").numel()])).collect();
            for &(i, view) in batch {
                let (img, label) = &train_images[i];
                let img = match view {
                    0 => img.clone(),
                    v => augment_variant(img, seed::mix(&[cfg.seed, epoch as u64, i as u64]), v - 1),
                };
                let mut tape = Tape::new();
                let vars = bind_params(&mut tape, &params, |n| grads.contains_key(n));
                let x = tape.constant(to_network_input(&img));
                let diverged = |e: AutodiffError| match e {
                    AutodiffError::NonFinite { .. } => Error::NonFiniteLoss { epoch, batch: b + 1 },
                    e => e.into(),
                };
                let probs = forward(&mut tape, &config, &vars, x, None).map_err(|e| match e {
                    Error::Autodiff(e) => diverged(e),
                    e => e,
                })?;
                if argmax(tape.value(probs).data()) == *label {
                    correct += 1;
                }
                let target = Tensor::from_fn(vec![1, config.num_classes], |k| if k == *label { 1.0 } else { 0.0 })?;
                let loss = tape.cross_entropy(probs, &target, mode, true).map_err(diverged)?;
                let value = tape.value(loss).data()[0];
                if !value.is_finite() {
                    return Err(Error::NonFiniteLoss { epoch, batch: b + 1 });
                }
                loss_sum += value as f64;
                tape.backward(loss).map_err(diverged)?;
                for (name, acc) in grads.iter_mut() {
                    let g = tape.grad(vars[*name]).expect("tracked parameter");
                    acc.iter_mut().zip(g).for_each(|(a, &g)| *a += g);
                }
            }
            let inv = 1.0 / batch.len() as f32;
            grads.values_mut().for_each(|g| g.iter_mut().for_each(|v| *v *= inv));
            let grad_refs: Vec<&[f32]> = trainable.iter().map(|n| grads[n.as_str()].as_slice()).collect();
            let mut tensors = params.tensors_mut(&trainable);
            adam.step(&mut tensors, &grad_refs)?;
        }

        let val_accuracy = if val_images.is_empty() { None } else { Some(accuracy(&config, &params, &val_images)?) };
        let stats = EpochStats {
            epoch,
            samples: order.len(),
            train_loss: loss_sum / order.len() as f64,
            train_accuracy: correct as f64 / order.len() as f64,
            val_accuracy,
        };
        progress(&stats);
        let score = val_accuracy.unwrap_or(f64::NEG_INFINITY);
        if best.as_ref().is_none_or(|(s, _, _)| score > *s || val_accuracy.is_none()) {
            best = Some((score, epoch, params.clone()));
        }
        curves.push(stats);
    }

    let (_, selected_epoch, selected) = best.expect("at least one epoch");
    let meta = TrainMeta {
        stream: cfg.stream.to_string(),
        seed: cfg.seed,
        epochs_run: cfg.epochs,
        selected_epoch,
        train_loss: curves.iter().map(|c| c.train_loss).collect(),
        train_accuracy: curves.iter().map(|c| c.train_accuracy).collect(),
        val_accuracy: curves.iter().filter_map(|c| c.val_accuracy).collect(),
        clahe: enhance,
    };
    Ok(TrainOutcome { checkpoint: Checkpoint { config, params: selected, meta }, curves })
}

/// Writes `epoch,train_loss,val_accuracy`; the accuracy cell is empty when
/// there is no validation split.
pub fn curves_csv(curves: &[EpochStats]) -> String {
    let mut out = String::from("epoch,train_loss,val_accuracy\n");
    for c in curves {
        let val = c.val_accuracy.map(|v| v.to_string()).unwrap_or_default();
        out.push_str(&format!("{},{},{}\n", c.epoch, c.train_loss, val));
    }
    out
}
