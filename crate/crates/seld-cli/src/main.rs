//! `seld`: command-line front end for the 3D sound event localization and
//! detection toolkit. Exit codes: 0 success, 1 validation error, 2 I/O error.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::Config;
use seld::repr::ReprFormat;

#[derive(Parser)]
#[command(
    name = "seld",
    version,
    about = "3D sound event localization and detection toolkit",
    after_help = "Config precedence: built-in defaults < --config file < --set overrides.\n\
                  Run a subcommand with --help for its flags."
)]
struct Cli {
    /// Config file of `key = value` lines (see --set for the keys).
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Config override, e.g. --set stft.n_mels=32 (repeatable).
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a synthetic FOA dataset (WAV + label CSV pairs + manifest).
    Simulate {
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        /// Number of clips to render.
        #[arg(long, default_value_t = 20)]
        clips: usize,
        /// Master seed; per-clip seeds derive from it.
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Apply audio-channel-swapping variants to WAV+CSV pairs.
    Augment {
        /// Dataset directory (or single WAV with a CSV next to it).
        #[arg(long)]
        input: PathBuf,
        /// Output directory for the augmented pairs.
        #[arg(long)]
        out: PathBuf,
        /// Variants to apply: `all`, a list `0,3,5`, or a range `0..7`.
        #[arg(long, default_value = "all")]
        variants: String,
        /// Additionally mirror elevation (extended variant set).
        #[arg(long, default_value_t = false)]
        z_flip: bool,
    },
    /// Extract feature tensors from WAV files.
    Extract {
        /// Dataset directory or single WAV.
        #[arg(long)]
        input: PathBuf,
        /// Output directory for `.tns` tensors.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model on a rendered dataset and write a checkpoint.
    Train {
        /// Dataset directory (WAV + CSV pairs, optionally a manifest).
        #[arg(long)]
        data: PathBuf,
        /// Output representation: multi-accdoa, sed-doa, sed-sde, sed-sce
        /// or sed-doa-sde.
        #[arg(long)]
        format: String,
        /// Checkpoint output path.
        #[arg(long)]
        out: PathBuf,
        /// Seed for initialization and batch sampling.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Pin the class count instead of inferring it from the labels.
        #[arg(long)]
        classes: Option<usize>,
    },
    /// Run checkpoint(s) over audio and write decoded prediction CSVs.
    Predict {
        /// Primary checkpoint.
        #[arg(long)]
        model: PathBuf,
        /// Second checkpoint (SED-SDE) for --joint.
        #[arg(long)]
        model2: Option<PathBuf>,
        /// Combine a SED-DOA and a SED-SDE checkpoint into one prediction.
        #[arg(long, default_value_t = false)]
        joint: bool,
        /// Dataset directory or single WAV.
        #[arg(long)]
        input: PathBuf,
        /// Output directory for prediction CSVs.
        #[arg(long)]
        out: PathBuf,
        /// Also dump raw branch outputs as `.stt` tensors.
        #[arg(long, default_value_t = false)]
        dump_tensors: bool,
    },
    /// Score prediction CSVs against ground-truth CSVs.
    Evaluate {
        /// Ground-truth CSV file or directory.
        #[arg(long)]
        gt: PathBuf,
        /// Prediction CSV file or directory (paired by file name).
        #[arg(long)]
        pred: PathBuf,
        /// Angular true-positive threshold in degrees.
        #[arg(long)]
        angular_deg: Option<f64>,
        /// Relative-distance true-positive threshold (1.0 = 100%).
        #[arg(long)]
        relative_distance: Option<f64>,
        /// Drop the angular threshold (SED-SDE style evaluation).
        #[arg(long, default_value_t = false)]
        no_angular: bool,
        /// Drop the distance threshold (SED-DOA style evaluation).
        #[arg(long, default_value_t = false)]
        no_distance: bool,
        /// Output format: `text` (aligned table) or `kv` (machine readable).
        #[arg(long, default_value = "text")]
        format: String,
    },
    /// Composite-score arithmetic from raw F1/DOAE/RDE values.
    Score {
        /// F1 in [0, 1].
        #[arg(long)]
        f1: f64,
        /// DOA error in degrees; omit for the detection+distance composite.
        #[arg(long)]
        doae: Option<f64>,
        /// Relative distance error.
        #[arg(long)]
        rde: Option<f64>,
    },
}

fn run(cli: Cli) -> seld::Result<()> {
    let mut cfg = Config::load(cli.config.as_deref(), &cli.set)?;
    match cli.command {
        Command::Simulate { out, clips, seed } => commands::simulate(&cfg, &out, clips, seed),
        Command::Augment {
            input,
            out,
            variants,
            z_flip,
        } => {
            let ids = commands::parse_variants(&variants)?;
            commands::augment(&cfg, &input, &out, &ids, z_flip)
        }
        Command::Extract { input, out } => commands::extract_features(&cfg, &input, &out),
        Command::Train {
            data,
            format,
            out,
            seed,
            classes,
        } => {
            let format = ReprFormat::from_name(&format)?;
            commands::train(&cfg, &data, format, &out, seed, classes)
        }
        Command::Predict {
            model,
            model2,
            joint,
            input,
            out,
            dump_tensors,
        } => commands::predict(
            &cfg,
            &model,
            model2.as_deref(),
            joint,
            &input,
            &out,
            dump_tensors,
        ),
        Command::Evaluate {
            gt,
            pred,
            angular_deg,
            relative_distance,
            no_angular,
            no_distance,
            format,
        } => {
            if let Some(deg) = angular_deg {
                cfg.metrics.angular_deg = deg;
            }
            if let Some(rel) = relative_distance {
                cfg.metrics.relative_distance = rel;
            }
            cfg.metrics.use_angular = !no_angular;
            cfg.metrics.use_distance = !no_distance;
            let kv = match format.as_str() {
                "kv" => true,
                "text" => false,
                other => {
                    return Err(seld::Error::validation(format!(
                        "unknown output format `{other}` (expected text or kv)"
                    )))
                }
            };
            commands::evaluate(&cfg, &gt, &pred, kv)
        }
        Command::Score { f1, doae, rde } => commands::score(f1, doae, rde),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version are not errors.
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_io() { 2 } else { 1 })
        }
    }
}
