//! Command implementations behind the `veinatn` binary. Each `cmd_*`
//! function runs one subcommand and writes a run manifest next to its
//! outputs, marked failed when the command errors.

pub mod manifest;

use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use rayon::prelude::*;
use serde::Serialize;

use veinatn::explain::{explain, export_saliency, ExplainParams};
use veinatn::image::{clahe, load_image, save_image, ClaheParams};
use veinatn::metrics::{det_curve, parse_det_csv, write_det_csv, Report, View, ViewReport, DET_HEADER};
use veinatn::model::{count_params, layer_shapes, load_checkpoint, param_shapes, save_checkpoint, Checkpoint};
use veinatn::protocol::{build_protocol, scan_dataset, DatasetKind, ProtocolSpec, Sample};
use veinatn::scores::{generate_scores, parse_scores_csv, score_set, scores_csv_bytes, StreamModel};
use veinatn::toy::write_toy_dataset;
use veinatn::train::{curves_csv, finetune, train, EpochStats, Stream, TrainConfig};

use manifest::{manifest_path, Run};

/// Environment variable supplying the default dataset root.
pub const DATA_ROOT_ENV: &str = "VEINATN_DATA_ROOT";

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    std::fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

/// `dir/stem_suffix.ext` for `dir/stem.ext`.
fn suffixed(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let name = match path.extension() {
        Some(ext) => format!("{stem}_{suffix}.{}", ext.to_string_lossy()),
        None => format!("{stem}_{suffix}"),
    };
    path.with_file_name(name)
}

fn curves_path(checkpoint: &Path) -> PathBuf {
    checkpoint.with_extension("curves.csv")
}

fn log_epoch(stream: Stream) -> impl FnMut(&EpochStats) {
    move |s| {
        let val = s.val_accuracy.map(|v| format!(" val_acc {v:.4}")).unwrap_or_default();
        eprintln!(
            "[{stream}] epoch {:>3}  loss {:.5}  train_acc {:.4}{val}",
            s.epoch, s.train_loss, s.train_accuracy
        );
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct PreprocessArgs {
    pub input: PathBuf,
    pub output: PathBuf,
    pub clahe: ClaheParams,
}

/// Mirrors the dataset tree with every image CLAHE-enhanced. Returns the
/// number of images written.
pub fn cmd_preprocess(args: &PreprocessArgs) -> Result<usize> {
    let mut run = Run::start("preprocess", manifest_path(&args.output, true), args, None)?;
    run.input(&args.input);
    run.output(&args.output);
    let result = (|| {
        ensure!(args.input != args.output, "input and output directories must differ");
        let listing = scan_dataset(&args.input)?;
        let rel: Vec<PathBuf> = listing
            .iter()
            .flat_map(|id| {
                id.sessions
                    .iter()
                    .flat_map(move |(s, files)| files.iter().map(move |f| Path::new(&id.name).join(s).join(f)))
            })
            .collect();
        rel.par_iter().try_for_each(|r| -> Result<()> {
            let out = args.output.join(r);
            let dir = out.parent().expect("nested path");
            std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
            save_image(&clahe(&load_image(args.input.join(r))?, args.clahe)?, &out)?;
            Ok(())
        })?;
        Ok(rel.len())
    })();
    run.finish(result)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum StreamSel {
    Normal,
    Enhanced,
    Both,
}

#[derive(Clone, Debug, Serialize)]
pub struct TrainArgs {
    /// Config file; the built-in defaults apply when absent.
    pub config: Option<PathBuf>,
    pub data_root: PathBuf,
    pub out: PathBuf,
    /// Overrides the config's stream.
    pub stream: Option<StreamSel>,
    #[serde(serialize_with = "display")]
    pub kind: DatasetKind,
    pub epochs: Option<usize>,
    pub seed: Option<u64>,
    pub no_augment: bool,
}

fn display<S: serde::Serializer>(v: &impl std::fmt::Display, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.serialize_str(&v.to_string())
}

fn resolve_config(path: Option<&Path>, epochs: Option<usize>, seed: Option<u64>, no_augment: bool) -> Result<TrainConfig> {
    let mut cfg = match path {
        Some(p) => TrainConfig::load(p)?,
        None => TrainConfig::default(),
    };
    if let Some(e) = epochs {
        cfg.epochs = e;
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if no_augment {
        cfg.augment = false;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn streams(sel: Option<StreamSel>, cfg: &TrainConfig) -> Vec<Stream> {
    match sel {
        None => vec![cfg.stream],
        Some(StreamSel::Normal) => vec![Stream::Normal],
        Some(StreamSel::Enhanced) => vec![Stream::Enhanced],
        Some(StreamSel::Both) => Stream::BOTH.to_vec(),
    }
}

/// Checkpoint path of `stream`: `out` itself for a single stream,
/// `<stem>_<stream>.<ext>` when both are trained.
pub fn stream_checkpoint(out: &Path, stream: Stream, both: bool) -> PathBuf {
    if both {
        suffixed(out, stream.as_str())
    } else {
        out.to_path_buf()
    }
}

#[derive(Serialize)]
struct Resolved<'a, A> {
    args: &'a A,
    train: &'a TrainConfig,
}

/// Resolves the training config and starts the run; a config error still
/// leaves a failed manifest behind.
fn start_training_run<A: Serialize>(
    command: &str,
    manifest: PathBuf,
    args: &A,
    config: Option<&Path>,
    epochs: Option<usize>,
    seed: Option<u64>,
    no_augment: bool,
) -> Result<(Run, TrainConfig)> {
    match resolve_config(config, epochs, seed, no_augment) {
        Ok(cfg) => {
            let mut run = Run::start(command, manifest, Resolved { args, train: &cfg }, Some(cfg.seed))?;
            if let Some(c) = config {
                run.input(c);
            }
            Ok((run, cfg))
        }
        Err(e) => {
            let mut run = Run::start(command, manifest, args, None)?;
            if let Some(c) = config {
                run.input(c);
            }
            run.finish(Err(e))
        }
    }
}

/// Trains one model per requested stream on the protocol's training split
/// and writes each checkpoint with its `epoch,train_loss,val_accuracy`
/// curve next to it.
pub fn cmd_train(args: &TrainArgs) -> Result<Vec<PathBuf>> {
    let (mut run, cfg) = start_training_run(
        "train",
        manifest_path(&args.out, false),
        args,
        args.config.as_deref(),
        args.epochs,
        args.seed,
        args.no_augment,
    )?;
    let list = streams(args.stream, &cfg);
    let both = list.len() > 1;
    for &s in &list {
        let ckpt = stream_checkpoint(&args.out, s, both);
        run.output(&ckpt);
        run.output(&curves_path(&ckpt));
    }
    let result = (|| {
        let protocol = build_protocol(&args.data_root, args.kind)?;
        let mut written = Vec::new();
        for &stream in &list {
            let cfg = TrainConfig { stream, ..cfg.clone() };
            let out = train(
                &cfg,
                protocol.num_identities(),
                &args.data_root,
                &protocol.train,
                &protocol.val,
                log_epoch(stream),
            )?;
            let path = stream_checkpoint(&args.out, stream, both);
            write_outcome(&path, &out.checkpoint, &out.curves)?;
            written.push(path);
        }
        Ok(written)
    })();
    run.finish(result)
}

fn write_outcome(path: &Path, ckpt: &Checkpoint, curves: &[EpochStats]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    save_checkpoint(ckpt, path)?;
    write_file(&curves_path(path), curves_csv(curves).as_bytes())
}

#[derive(Clone, Debug, Serialize)]
pub struct FinetuneArgs {
    pub checkpoint: PathBuf,
    pub config: Option<PathBuf>,
    pub data_root: PathBuf,
    pub out: PathBuf,
    #[serde(serialize_with = "display")]
    pub kind: DatasetKind,
    pub epochs: Option<usize>,
    pub seed: Option<u64>,
    pub no_augment: bool,
}

/// Re-heads a trained checkpoint for the dataset's identities and trains
/// it on the fine-tuning split. The stream and its enhancement are taken
/// from the source checkpoint.
pub fn cmd_finetune(args: &FinetuneArgs) -> Result<PathBuf> {
    let (mut run, mut cfg) = start_training_run(
        "finetune",
        manifest_path(&args.out, false),
        args,
        args.config.as_deref(),
        args.epochs,
        args.seed,
        args.no_augment,
    )?;
    run.input(&args.checkpoint);
    run.output(&args.out);
    run.output(&curves_path(&args.out));
    let result = (|| {
        let source = load_checkpoint(&args.checkpoint)?;
        cfg.stream = source.meta.stream.parse().unwrap_or_default();
        if let Some(p) = source.meta.clahe {
            cfg.clahe_tiles = [p.tiles.0, p.tiles.1];
            cfg.clahe_clip = p.clip;
        }
        let protocol = build_protocol(&args.data_root, args.kind)?;
        let out = finetune(
            &cfg,
            &source,
            protocol.num_identities(),
            &args.data_root,
            &protocol.train,
            log_epoch(cfg.stream),
        )?;
        write_outcome(&args.out, &out.checkpoint, &out.curves)?;
        Ok(args.out.clone())
    })();
    run.finish(result)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ProbeSel {
    Test,
    Train,
    All,
}

fn probes(protocol: &ProtocolSpec, sel: ProbeSel) -> Vec<Sample> {
    match sel {
        ProbeSel::Test => protocol.test.clone(),
        ProbeSel::Train => protocol.train.clone(),
        ProbeSel::All => protocol.train.iter().chain(&protocol.val).chain(&protocol.test).cloned().collect(),
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ScoreArgs {
    pub normal: PathBuf,
    pub enhanced: PathBuf,
    pub data_root: PathBuf,
    #[serde(serialize_with = "display")]
    pub kind: DatasetKind,
    pub out: PathBuf,
    pub probes: ProbeSel,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct ScoreCounts {
    pub genuine: usize,
    pub impostor: usize,
}

/// Genuine and impostor counts the protocol yields, without inference.
pub fn cmd_score_dry_run(data_root: &Path, kind: DatasetKind, sel: ProbeSel) -> Result<ScoreCounts> {
    let protocol = build_protocol(data_root, kind)?;
    let (genuine, impostor) = veinatn::scores::score_counts(probes(&protocol, sel).len(), protocol.num_identities());
    Ok(ScoreCounts { genuine, impostor })
}

/// Scores every probe against every identity with both streams and writes
/// the scores CSV.
pub fn cmd_score(args: &ScoreArgs) -> Result<ScoreCounts> {
    let mut run = Run::start("score", manifest_path(&args.out, false), args, None)?;
    run.input(&args.normal);
    run.input(&args.enhanced);
    run.output(&args.out);
    let result = (|| {
        let normal = StreamModel::from(load_checkpoint(&args.normal)?);
        let enhanced = StreamModel::from(load_checkpoint(&args.enhanced)?);
        let protocol = build_protocol(&args.data_root, args.kind)?;
        let pairs =
            generate_scores(&args.data_root, &probes(&protocol, args.probes), protocol.num_identities(), &normal, &enhanced)?;
        write_file(&args.out, &scores_csv_bytes(&pairs)?)?;
        let genuine = pairs.iter().filter(|p| p.genuine).count();
        Ok(ScoreCounts { genuine, impostor: pairs.len() - genuine })
    })();
    run.finish(result)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ViewSel {
    Normal,
    Enhanced,
    Fused,
    All,
}

impl ViewSel {
    fn views(self) -> Vec<View> {
        match self {
            ViewSel::Normal => vec![View::Normal],
            ViewSel::Enhanced => vec![View::Enhanced],
            ViewSel::Fused => vec![View::Fused],
            ViewSel::All => View::ALL.to_vec(),
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct EvalArgs {
    /// A scores CSV, or a DET CSV written by an earlier `eval`.
    pub input: PathBuf,
    pub report: PathBuf,
    pub det: Option<PathBuf>,
    pub view: ViewSel,
}

/// DET output path of `view`; with several views each gets its own file.
pub fn det_path(det: &Path, view: View, several: bool) -> PathBuf {
    if several {
        suffixed(det, view.as_str())
    } else {
        det.to_path_buf()
    }
}

/// Computes EER and TAR at 1 %, 0.1 % and 0.01 % FMR per view and writes
/// the report, plus DET curves when requested.
pub fn cmd_eval(args: &EvalArgs) -> Result<Report> {
    let mut run = Run::start("eval", manifest_path(&args.report, false), args, None)?;
    run.input(&args.input);
    run.output(&args.report);
    let views = args.view.views();
    if let Some(det) = &args.det {
        views.iter().for_each(|&v| run.output(&det_path(det, v, views.len() > 1)));
    }
    let result = (|| {
        let bytes = std::fs::read(&args.input).with_context(|| format!("reading {}", args.input.display()))?;
        let mut report = Report::default();
        if bytes.starts_with(DET_HEADER.as_bytes()) {
            let [view] = views[..] else {
                bail!("a DET curve holds a single view; pass --view normal, enhanced or fused");
            };
            let curve = parse_det_csv(&bytes)?;
            report.set(view, ViewReport::from_det(&curve, None)?);
            if let Some(det) = &args.det {
                write_file(det, write_det_csv(&curve).as_bytes())?;
            }
        } else {
            let pairs = parse_scores_csv(&bytes)?;
            for &view in &views {
                let set = score_set(&pairs, view)?;
                let curve = det_curve(&set);
                report.set(view, ViewReport::from_det(&curve, Some((set.genuine().len(), set.impostor().len())))?);
                if let Some(det) = &args.det {
                    write_file(&det_path(det, view, views.len() > 1), write_det_csv(&curve).as_bytes())?;
                }
            }
        }
        write_file(&args.report, report.to_toml().as_bytes())?;
        Ok(report)
    })();
    run.finish(result)
}

/// Parses `a..b` (inclusive), `a..=b`, a comma list or a single depth.
pub fn parse_depths(text: &str) -> Result<Vec<usize>> {
    let depths: Vec<usize> = if let Some((a, b)) = text.split_once("..") {
        let (a, b) = (a.trim().parse::<usize>()?, b.trim_start_matches('=').trim().parse::<usize>()?);
        (a..=b).collect()
    } else {
        text.split(',').map(|p| p.trim().parse()).collect::<Result<_, _>>()?
    };
    ensure!(!depths.is_empty(), "empty depth range `{text}`");
    if let Some(d) = depths.iter().find(|d| !(1..=veinatn::model::MAX_BLOCKS).contains(d)) {
        bail!("depth {d} outside 1..={}", veinatn::model::MAX_BLOCKS);
    }
    Ok(depths)
}

#[derive(Clone, Debug, Serialize)]
pub struct AblateArgs {
    pub config: Option<PathBuf>,
    pub data_root: PathBuf,
    pub out_dir: PathBuf,
    pub depths: Vec<usize>,
    #[serde(serialize_with = "display")]
    pub kind: DatasetKind,
    pub epochs: Option<usize>,
    pub seed: Option<u64>,
    pub no_augment: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AblationRow {
    pub depth: usize,
    pub param_count: usize,
    pub eer: f64,
}

/// For each depth: trains both streams, scores the test split and records
/// the fused EER. Writes `summary.csv` (`depth,param_count,eer`) and a
/// `depth_<d>/` directory of checkpoints, scores and report per depth.
pub fn cmd_ablate(args: &AblateArgs) -> Result<Vec<AblationRow>> {
    let (mut run, cfg) = start_training_run(
        "ablate",
        manifest_path(&args.out_dir, true),
        args,
        args.config.as_deref(),
        args.epochs,
        args.seed,
        args.no_augment,
    )?;
    run.output(&args.out_dir);
    let result = (|| {
        let protocol = build_protocol(&args.data_root, args.kind)?;
        let mut rows = Vec::new();
        for &depth in &args.depths {
            let dir = args.out_dir.join(format!("depth_{depth}"));
            let mut models = Vec::new();
            for stream in Stream::BOTH {
                let c = TrainConfig { blocks: depth, stream, ..cfg.clone() };
                let out = train(
                    &c,
                    protocol.num_identities(),
                    &args.data_root,
                    &protocol.train,
                    &protocol.val,
                    log_epoch(stream),
                )?;
                write_outcome(&dir.join(format!("{stream}.vann")), &out.checkpoint, &out.curves)?;
                models.push(StreamModel::from(out.checkpoint));
            }
            let pairs = generate_scores(&args.data_root, &protocol.test, protocol.num_identities(), &models[0], &models[1])?;
            write_file(&dir.join("scores.csv"), &scores_csv_bytes(&pairs)?)?;
            let mut report = Report::default();
            for view in View::ALL {
                report.set(view, ViewReport::from_scores(&score_set(&pairs, view)?));
            }
            write_file(&dir.join("report.toml"), report.to_toml().as_bytes())?;
            let row = AblationRow {
                depth,
                param_count: count_params(&models[0].config),
                eer: report.fused.as_ref().expect("set above").eer,
            };
            eprintln!("depth {depth}: {} parameters, fused EER {}", row.param_count, row.eer);
            rows.push(row);
        }
        let mut csv = String::from("depth,param_count,eer\n");
        rows.iter().for_each(|r| csv.push_str(&format!("{},{},{}\n", r.depth, r.param_count, r.eer)));
        write_file(&args.out_dir.join("summary.csv"), csv.as_bytes())?;
        Ok(rows)
    })();
    run.finish(result)
}

/// Human-readable summary of a checkpoint: configuration, per-tensor
/// parameter table, total count and activation shapes for a 224 input.
pub fn cmd_info(checkpoint: &Path) -> Result<String> {
    let ckpt = load_checkpoint(checkpoint)?;
    let c = &ckpt.config;
    let mut out = String::new();
    out.push_str(&format!("checkpoint: {}\n", checkpoint.display()));
    out.push_str(&format!(
        "config: blocks={} filters={} kernels={:?} groups={} pool_grid={} heads={} qk_dim={} v_dim={} classes={} loss={:?} residual={}\n",
        c.blocks, c.filters, c.kernel_sizes, c.groups, c.pool_grid, c.heads, c.qk_dim, c.v_dim, c.num_classes, c.loss, c.residual
    ));
    out.push_str(&format!(
        "training: stream={} seed={} epochs={} selected_epoch={}\n",
        ckpt.meta.stream, ckpt.meta.seed, ckpt.meta.epochs_run, ckpt.meta.selected_epoch
    ));
    out.push_str("\nparameter                     shape              count\n");
    let mut total = 0;
    for (name, shape) in param_shapes(c) {
        let n: usize = shape.iter().product();
        total += n;
        out.push_str(&format!("{name:<29} {:<18} {n}\n", format!("{shape:?}")));
    }
    out.push_str(&format!("total parameters: {total}\n"));
    debug_assert_eq!(total, ckpt.params.count());
    out.push_str("\nstage                         output shape\n");
    for l in layer_shapes(c, &ckpt.params, veinatn::image::NETWORK_SIZE)? {
        out.push_str(&format!("{:<29} {:?}\n", l.name, l.shape));
    }
    Ok(out)
}

#[derive(Clone, Debug, Serialize)]
pub struct ExplainArgs {
    pub normal: PathBuf,
    pub enhanced: Option<PathBuf>,
    pub image: PathBuf,
    pub claimed_id: Option<usize>,
    pub out_prefix: PathBuf,
    pub grid: (usize, usize),
    pub samples: usize,
    pub seed: u64,
    pub kernel_width: f64,
    pub ridge_lambda: f64,
    pub top_fraction: f64,
}

/// Explains the claimed-identity score of one probe for each given
/// stream, writing `<prefix>_<stream>_overlay.png` and
/// `<prefix>_<stream>_weights.csv`.
pub fn cmd_explain(args: &ExplainArgs) -> Result<Vec<PathBuf>> {
    let mut run = Run::start("explain", manifest_path(&args.out_prefix, false), args, Some(args.seed))?;
    let ckpts: Vec<&PathBuf> = std::iter::once(&args.normal).chain(&args.enhanced).collect();
    for c in &ckpts {
        run.input(c);
    }
    run.input(&args.image);
    let result = (|| {
        let raw = load_image(&args.image)?;
        let params = ExplainParams {
            grid: args.grid,
            samples: args.samples,
            kernel_width: args.kernel_width,
            ridge_lambda: args.ridge_lambda,
            seed: args.seed,
        };
        let mut written = Vec::new();
        for path in ckpts {
            let ckpt = load_checkpoint(path)?;
            let stream = if ckpt.meta.stream.is_empty() { "model".to_string() } else { ckpt.meta.stream.clone() };
            let model = StreamModel::from(ckpt);
            let n = model.num_classes();
            let claimed = match args.claimed_id {
                Some(id) if id < n => id,
                Some(id) => bail!("claimed id {id} out of range; valid ids are 0..={}", n - 1),
                None => bail!("missing --claimed-id; valid ids are 0..={}", n - 1),
            };
            let img = match model.clahe {
                Some(p) => clahe(&raw, p)?,
                None => raw.clone(),
            };
            let map = explain(&img, &params, |m| Ok(model.probabilities(m)?[claimed] as f64))?;
            let prefix = suffixed(&args.out_prefix, &stream);
            if let Some(dir) = prefix.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir)?;
            }
            written.extend(export_saliency(&map, &img, args.top_fraction, &prefix)?);
        }
        Ok(written)
    })();
    let outputs = result.as_ref().map(|w| w.clone()).unwrap_or_default();
    outputs.iter().for_each(|p| run.output(p));
    run.finish(result)
}

#[derive(Clone, Debug, Serialize)]
pub struct MakeToyArgs {
    pub out: PathBuf,
    pub identities: usize,
    pub samples: usize,
    pub sessions: usize,
    pub seed: u64,
}

/// Writes the procedural toy dataset.
pub fn cmd_make_toy(args: &MakeToyArgs) -> Result<usize> {
    let mut run = Run::start("make-toy", manifest_path(&args.out, true), args, Some(args.seed))?;
    run.output(&args.out);
    let result = write_toy_dataset(&args.out, args.identities, args.samples, args.sessions, args.seed)
        .map(|p| p.len())
        .map_err(Into::into);
    run.finish(result)
}
