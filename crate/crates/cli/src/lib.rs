//! `dcca` command line: synthetic pullbacks, augmentation, training,
//! dual-layer style training, inference, evaluation and distance-colour-coded
//! export, individually or as one reproducible pipeline.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.

pub mod config;
pub mod ingest;
pub mod manifest;
pub mod pipeline;
pub mod stages;

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use anyhow::{bail, Result};
use clap::{Parser, Subcommand, ValueEnum};

use dcca_core::container::save_volume;
use dcca_core::{CoordSystem, Target, VoxelSpacing};

use crate::config::RunConfig;
use crate::manifest::Recorder;

pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

/// Invalid invocation or configuration.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

#[derive(Debug, Parser)]
#[command(name = "dcca", version, about = "Distance-colour-coded IV-OCT stent apposition assessment")]
struct Cli {
    /// Run configuration (TOML); built-in toy defaults when omitted.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Override a configuration field, e.g. `--set stent.epochs=5`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Seed for phantom generation and every training round.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum TargetArg {
    Stent,
    Lumen,
}

impl From<TargetArg> for Target {
    fn from(t: TargetArg) -> Self {
        match t {
            TargetArg::Stent => Target::Stent,
            TargetArg::Lumen => Target::Lumen,
        }
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Render phantom pullbacks into <out>/{train,val,test,dim}.
    Synth {
        #[arg(long)]
        out: PathBuf,
    },
    /// Sliding-window copies of polar pullbacks.
    Augment {
        /// Container or directory of containers.
        #[arg(long, required = true)]
        input: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a single-target model.
    Train {
        #[arg(long, value_enum)]
        target: TargetArg,
        /// Training containers or directories.
        #[arg(long, required = true)]
        data: Vec<PathBuf>,
        /// Validation containers or directories.
        #[arg(long)]
        val: Vec<PathBuf>,
        /// Start from this checkpoint's weights.
        #[arg(long)]
        init: Option<PathBuf>,
        /// Checkpoint directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Second stent round with style-transferred challenging struts.
    StyleTrain {
        /// First-round stent checkpoint.
        #[arg(long)]
        round1: PathBuf,
        #[arg(long, required = true)]
        data: Vec<PathBuf>,
        #[arg(long)]
        val: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Predict masks for whole pullbacks.
    Infer {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, value_enum)]
        target: TargetArg,
        #[arg(long, required = true)]
        input: Vec<PathBuf>,
        /// Depth stride of the sliding window.
        #[arg(long)]
        stride: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Strut and lumen metrics of predictions against ground truth.
    Eval {
        #[arg(long, required = true)]
        truth: Vec<PathBuf>,
        #[arg(long)]
        predictions: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Apposition report and coloured PLY export from predicted masks.
    Dcca {
        /// Prediction stem; `<stem>.stent` and `<stem>.lumen` must exist.
        #[arg(long)]
        case: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Every stage end to end into one run directory.
    Pipeline {
        #[arg(long)]
        run_dir: PathBuf,
    },
    /// Convert a directory of frame_NNNNN.png files into a volume container.
    Ingest {
        #[arg(long)]
        frames: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "volume")]
        name: String,
        #[arg(long)]
        dx_um: f64,
        #[arg(long)]
        dy_um: f64,
        #[arg(long)]
        dz_um: f64,
        /// Frames are polar (A-line) images rather than Cartesian.
        #[arg(long)]
        polar: bool,
    },
}

fn stems(paths: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for p in paths {
        out.extend(stages::image_stems(p)?);
    }
    if out.is_empty() {
        bail!("no volume containers in {paths:?}");
    }
    Ok(out)
}

fn single_stage<T>(
    out: &Path,
    name: &str,
    cfg: &RunConfig,
    f: impl FnOnce() -> Result<stages::Touched<T>>,
) -> Result<T> {
    let mut rec = Recorder::new(out, name, cfg.hash(), cfg.seed);
    let v = rec.stage(name, f)?;
    rec.finish()?;
    Ok(v)
}

fn execute(cli: Cli) -> Result<()> {
    let cfg = config::load(cli.config.as_deref(), &cli.overrides, cli.seed)?;
    match cli.command {
        Command::Synth { out } => single_stage(&out, "synth", &cfg, || stages::synth(&cfg, &out)),
        Command::Augment { input, out } => {
            let s = stems(&input)?;
            single_stage(&out, "augment", &cfg, || stages::augment(&cfg, &s, &out))
        }
        Command::Train {
            target,
            data,
            val,
            init,
            out,
        } => {
            let (d, v) = (stems(&data)?, if val.is_empty() { Vec::new() } else { stems(&val)? });
            single_stage(&out, "train", &cfg, || {
                stages::train_model(&cfg, target.into(), &d, &v, &out, init.as_deref())
            })
            .map(|_| ())
        }
        Command::StyleTrain { round1, data, val, out } => {
            let (d, v) = (stems(&data)?, if val.is_empty() { Vec::new() } else { stems(&val)? });
            single_stage(&out, "style-train", &cfg, || stages::style_train(&cfg, &round1, &d, &v, &out)).map(|_| ())
        }
        Command::Infer {
            checkpoint,
            target,
            input,
            stride,
            out,
        } => {
            if stride == Some(0) {
                bail!(UsageError("--stride must be >= 1".into()));
            }
            let s = stems(&input)?;
            single_stage(&out, "infer", &cfg, || stages::infer(&cfg, &checkpoint, &s, target.into(), stride, &out))
        }
        Command::Eval { truth, predictions, out } => {
            let s = stems(&truth)?;
            single_stage(&out, "eval", &cfg, || {
                let (read, _, m) = stages::evaluate(&s, &predictions)?;
                let path = stages::write_json(&m, &out.join(stages::METRICS_FILE))?;
                Ok((read, vec![path], ()))
            })
        }
        Command::Dcca { case, out } => single_stage(&out, "dcca", &cfg, || stages::dcca(&cfg, &case, &out)),
        Command::Pipeline { run_dir } => {
            let outcome = pipeline::run(&cfg, &run_dir)?;
            eprintln!(
                "pipeline finished in {:.1} s; metrics in {}",
                outcome.manifest.total_seconds,
                run_dir.join("reports").join(stages::METRICS_FILE).display()
            );
            Ok(())
        }
        Command::Ingest {
            frames,
            out,
            name,
            dx_um,
            dy_um,
            dz_um,
            polar,
        } => {
            let spacing = VoxelSpacing::new(dx_um, dy_um, dz_um).map_err(|e| UsageError(e.to_string()))?;
            let coord = if polar { CoordSystem::Polar } else { CoordSystem::Cartesian };
            single_stage(&out, "ingest", &cfg, || {
                let (v, files) = ingest::ingest_frames(&frames, spacing, coord)?;
                let stem = out.join(&name);
                save_volume(&v, &stem)?;
                let written = vec![
                    dcca_core::container::meta_path(&stem),
                    dcca_core::container::raw_path(&stem),
                ];
                Ok((files, written, ()))
            })
        }
    }
}

/// Exit code for a failed command.
pub fn exit_code(e: &anyhow::Error) -> i32 {
    for cause in e.chain() {
        if cause.downcast_ref::<UsageError>().is_some() {
            return EXIT_USAGE;
        }
        if let Some(dcca_nn::Error::NonFiniteLoss { .. }) = cause.downcast_ref::<dcca_nn::Error>() {
            return EXIT_NUMERIC;
        }
    }
    EXIT_DATA
}

/// Parses `argv` (program name first), runs the command and returns the
/// process exit code. Diagnostics go to stderr.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            exit_code(&e)
        }
    }
}
