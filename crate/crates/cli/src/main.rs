use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};

use veinatn::image::ClaheParams;
use veinatn::protocol::DatasetKind;
use veinatn_cli::*;

#[derive(Parser)]
#[command(name = "veinatn", version, about = "Fingervein verification with dual-stream attention networks")]
struct Cli {
    /// Worker threads for preprocessing, scoring and explanation.
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct DataArgs {
    /// Dataset root.
    #[arg(long, env = DATA_ROOT_ENV)]
    data_root: PathBuf,
    /// Protocol: fv300, sessions or split:TRAIN,VAL,TEST.
    #[arg(long, default_value = "fv300")]
    kind: DatasetKind,
}

#[derive(Args)]
struct TrainOverrides {
    /// Training config (TOML); built-in defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Train on raw images only.
    #[arg(long)]
    no_augment: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Write a CLAHE-enhanced copy of a dataset tree.
    Preprocess {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long, num_args = 2, value_names = ["TX", "TY"], default_values_t = [8, 8])]
        tiles: Vec<usize>,
        #[arg(long, default_value_t = 2.0)]
        clip: f64,
    },
    /// Train one or both streams.
    Train {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        overrides: TrainOverrides,
        #[arg(long)]
        stream: Option<StreamSel>,
        /// Checkpoint path; with `--stream both` the stream name is appended.
        #[arg(long)]
        out: PathBuf,
    },
    /// Re-head a checkpoint for a new dataset and fine-tune it.
    Finetune {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, env = DATA_ROOT_ENV)]
        data_root: PathBuf,
        #[arg(long, default_value = "sessions")]
        kind: DatasetKind,
        #[command(flatten)]
        overrides: TrainOverrides,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score probes against every identity with both streams.
    Score {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, required_unless_present = "dry_run")]
        normal: Option<PathBuf>,
        #[arg(long, required_unless_present = "dry_run")]
        enhanced: Option<PathBuf>,
        #[arg(long, required_unless_present = "dry_run")]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "test")]
        probes: ProbeSel,
        /// Print genuine and impostor counts without running inference.
        #[arg(long)]
        dry_run: bool,
    },
    /// Compute EER, TAR and DET curves from scores.
    Eval {
        /// Scores CSV or DET CSV.
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        report: PathBuf,
        #[arg(long)]
        det: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "all")]
        view: ViewSel,
    },
    /// Train and evaluate networks of several depths.
    Ablate {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        overrides: TrainOverrides,
        /// Depths as `1..3` (inclusive) or `1,2,3`.
        #[arg(long, default_value = "1..3")]
        depths: String,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Print a checkpoint's configuration and parameter breakdown.
    Info { checkpoint: PathBuf },
    /// Explain a probe's claimed-identity score.
    Explain {
        #[arg(long)]
        normal: PathBuf,
        #[arg(long)]
        enhanced: Option<PathBuf>,
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        claimed_id: Option<usize>,
        #[arg(long)]
        out_prefix: PathBuf,
        #[arg(long, num_args = 2, value_names = ["GX", "GY"], default_values_t = [8, 8])]
        grid: Vec<usize>,
        #[arg(long, default_value_t = 256)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 0.25)]
        kernel_width: f64,
        #[arg(long, default_value_t = 1e-3)]
        ridge_lambda: f64,
        /// Fraction of cells highlighted in the overlay.
        #[arg(long, default_value_t = 0.1)]
        top_fraction: f64,
    },
    /// Write a small procedural dataset.
    MakeToy {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 8)]
        identities: usize,
        #[arg(long, default_value_t = 10)]
        samples: usize,
        #[arg(long, default_value_t = 1)]
        sessions: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn run(cli: Cli) -> Result<()> {
    anyhow::ensure!(cli.threads >= 1, "--threads must be at least 1");
    rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build_global()?;
    match cli.command {
        Command::Preprocess { input, output, tiles, clip } => {
            let n = cmd_preprocess(&PreprocessArgs { input, output, clahe: ClaheParams { tiles: (tiles[0], tiles[1]), clip } })?;
            println!("enhanced {n} images");
        }
        Command::Train { data, overrides, stream, out } => {
            for p in cmd_train(&TrainArgs {
                config: overrides.config,
                data_root: data.data_root,
                out,
                stream,
                kind: data.kind,
                epochs: overrides.epochs,
                seed: overrides.seed,
                no_augment: overrides.no_augment,
            })? {
                println!("wrote {}", p.display());
            }
        }
        Command::Finetune { checkpoint, data_root, kind, overrides, out } => {
            let p = cmd_finetune(&FinetuneArgs {
                checkpoint,
                config: overrides.config,
                data_root,
                out,
                kind,
                epochs: overrides.epochs,
                seed: overrides.seed,
                no_augment: overrides.no_augment,
            })?;
            println!("wrote {}", p.display());
        }
        Command::Score { data, normal, enhanced, out, probes, dry_run } => {
            let counts = if dry_run {
                cmd_score_dry_run(&data.data_root, data.kind, probes)?
            } else {
                cmd_score(&ScoreArgs {
                    normal: normal.expect("required"),
                    enhanced: enhanced.expect("required"),
                    data_root: data.data_root,
                    kind: data.kind,
                    out: out.expect("required"),
                    probes,
                })?
            };
            println!("genuine {} impostor {}", counts.genuine, counts.impostor);
        }
        Command::Eval { input, report, det, view } => {
            print!("{}", cmd_eval(&EvalArgs { input, report, det, view })?.to_toml());
        }
        Command::Ablate { data, overrides, depths, out_dir } => {
            let rows = cmd_ablate(&AblateArgs {
                config: overrides.config,
                data_root: data.data_root,
                out_dir,
                depths: parse_depths(&depths)?,
                kind: data.kind,
                epochs: overrides.epochs,
                seed: overrides.seed,
                no_augment: overrides.no_augment,
            })?;
            println!("depth,param_count,eer");
            rows.iter().for_each(|r| println!("{},{},{}", r.depth, r.param_count, r.eer));
        }
        Command::Info { checkpoint } => print!("{}", cmd_info(&checkpoint)?),
        Command::Explain {
            normal,
            enhanced,
            image,
            claimed_id,
            out_prefix,
            grid,
            samples,
            seed,
            kernel_width,
            ridge_lambda,
            top_fraction,
        } => {
            for p in cmd_explain(&ExplainArgs {
                normal,
                enhanced,
                image,
                claimed_id,
                out_prefix,
                grid: (grid[0], grid[1]),
                samples,
                seed,
                kernel_width,
                ridge_lambda,
                top_fraction,
            })? {
                println!("wrote {}", p.display());
            }
        }
        Command::MakeToy { out, identities, samples, sessions, seed } => {
            let n = cmd_make_toy(&MakeToyArgs { out, identities, samples, sessions, seed })?;
            println!("wrote {n} images");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
