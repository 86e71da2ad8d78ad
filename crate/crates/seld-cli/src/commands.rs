//! Subcommand implementations.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use seld::augment::{acs_audio, acs_labels, AcsVariant};
use seld::features::extract;
use seld::labels::{parse_labels, write_labels};
use seld::losses::LossWeights;
use seld::metrics::{match_and_count, MatchCounts, MetricsReport};
use seld::model::{
    predict_clip, predict_joint, train as train_model, Checkpoint, SeldModel, TrainConfig,
    TrainItem,
};
use seld::repr::{encode, ReprFormat};
use seld::sim::{read_manifest, render_dataset, ManifestEntry};
use seld::types::{ClassMap, Clip, FrameGrid};
use seld::{io, Error, Result};

use crate::config::Config;

/// `simulate`: render a synthetic WAV+CSV dataset.
pub fn simulate(cfg: &Config, out: &Path, clips: usize, seed: u64) -> Result<()> {
    let template = cfg.scene_spec(seed)?;
    let entries = render_dataset::<f64>(&template, clips, out)?;
    println!(
        "wrote {} clip(s) ({}s each) to {}",
        entries.len(),
        template.duration,
        out.display()
    );
    Ok(())
}

/// Collects (wav, csv) pairs from a dataset directory or a single wav path.
fn collect_pairs(input: &Path, need_csv: bool) -> Result<Vec<ManifestEntry>> {
    if input.is_file() {
        let csv = input.with_extension("csv");
        if need_csv && !csv.is_file() {
            return Err(Error::validation(format!(
                "no label file next to {}",
                input.display()
            )));
        }
        return Ok(vec![ManifestEntry {
            wav: input.to_path_buf(),
            csv,
        }]);
    }
    if !input.is_dir() {
        return Err(Error::validation(format!(
            "{} is neither a file nor a directory",
            input.display()
        )));
    }
    if input.join("manifest.csv").is_file() {
        return read_manifest(input);
    }
    let mut wavs: Vec<PathBuf> = std::fs::read_dir(input)
        .map_err(|e| Error::io(input, e))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|ext| ext == "wav"))
        .collect();
    wavs.sort();
    let mut pairs = Vec::new();
    for wav in wavs {
        let csv = wav.with_extension("csv");
        if need_csv && !csv.is_file() {
            return Err(Error::validation(format!(
                "no label file next to {}",
                wav.display()
            )));
        }
        pairs.push(ManifestEntry { wav, csv });
    }
    Ok(pairs)
}

/// Parses a label CSV, inferring the class count from the data when the
/// caller doesn't pin one.
fn parse_labels_flexible(
    text: &str,
    grid: FrameGrid,
    min_classes: usize,
) -> Result<(Clip<f64>, usize)> {
    let max_class = text
        .lines()
        .filter_map(|l| l.split(',').nth(1)?.trim().parse::<usize>().ok())
        .max();
    let num_classes = (max_class.map_or(0, |c| c + 1)).max(min_classes).max(1);
    let classes = ClassMap::numbered(num_classes)?;
    Ok((parse_labels(text, grid, &classes)?, num_classes))
}

fn stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "clip".to_string())
}

/// `augment`: apply ACS variants to WAV+CSV pairs, writing suffixed copies.
pub fn augment(
    cfg: &Config,
    input: &Path,
    out: &Path,
    variants: &[u8],
    z_flip: bool,
) -> Result<()> {
    let pairs = collect_pairs(input, true)?;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let variants: Vec<AcsVariant> = variants
        .iter()
        .map(|&id| {
            if z_flip {
                AcsVariant::with_z_flip(id)
            } else {
                AcsVariant::new(id)
            }
        })
        .collect::<Result<_>>()?;

    let jobs: Vec<(&ManifestEntry, AcsVariant)> = pairs
        .iter()
        .flat_map(|pair| variants.iter().map(move |v| (pair, *v)))
        .collect();

    let written: Vec<Result<ManifestEntry>> = jobs
        .par_iter()
        .map(|(pair, variant)| {
            let audio = io::read_wav::<f64>(&pair.wav)?;
            let text = std::fs::read_to_string(&pair.csv).map_err(|e| Error::io(&pair.csv, e))?;
            let grid = FrameGrid::new(cfg.label_hop, audio.duration())?;
            let (clip, _) = parse_labels_flexible(&text, grid, 0)?;

            let suffix = if variant.flips_z() {
                format!("acs{}z", variant.id())
            } else {
                format!("acs{}", variant.id())
            };
            let wav_out = out.join(format!("{}_{suffix}.wav", stem(&pair.wav)));
            let csv_out = wav_out.with_extension("csv");
            io::write_wav(&wav_out, &acs_audio(&audio, *variant)?)?;
            io::write_atomic(&csv_out, write_labels(&acs_labels(&clip, *variant)?).as_bytes())?;
            Ok(ManifestEntry {
                wav: wav_out,
                csv: csv_out,
            })
        })
        .collect();

    let mut entries = Vec::new();
    for item in written {
        entries.push(item?);
    }
    entries.sort_by(|a, b| a.wav.cmp(&b.wav));
    let manifest: String = entries
        .iter()
        .map(|e| {
            format!(
                "{},{}\n",
                e.wav.file_name().unwrap().to_string_lossy(),
                e.csv.file_name().unwrap().to_string_lossy()
            )
        })
        .collect();
    io::write_atomic(&out.join("manifest.csv"), manifest.as_bytes())?;
    println!("wrote {} augmented pair(s) to {}", entries.len(), out.display());
    Ok(())
}

/// `extract`: WAV files to feature tensors.
pub fn extract_features(cfg: &Config, input: &Path, out: &Path) -> Result<()> {
    let pairs = collect_pairs(input, false)?;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let results: Vec<Result<()>> = pairs
        .par_iter()
        .map(|pair| {
            let audio = io::read_wav::<f64>(&pair.wav)?;
            let features = extract(&audio, &cfg.stft)?;
            io::write_tensor3(&out.join(format!("{}.tns", stem(&pair.wav))), &features.data)
        })
        .collect();
    for r in results {
        r?;
    }
    println!("extracted {} feature tensor(s) to {}", pairs.len(), out.display());
    Ok(())
}

/// `train`: fit one model on a rendered dataset and write a checkpoint.
pub fn train(
    cfg: &Config,
    data: &Path,
    format: ReprFormat,
    out: &Path,
    seed: u64,
    classes_override: Option<usize>,
) -> Result<()> {
    let pairs = collect_pairs(data, true)?;
    if pairs.is_empty() {
        return Err(Error::validation(format!(
            "no training clips found in {}",
            data.display()
        )));
    }

    // Two passes: settle the class count, then encode targets against it.
    let mut texts = Vec::with_capacity(pairs.len());
    let mut num_classes = classes_override.unwrap_or(1);
    for pair in &pairs {
        let text = std::fs::read_to_string(&pair.csv).map_err(|e| Error::io(&pair.csv, e))?;
        let max_class = text
            .lines()
            .filter_map(|l| l.split(',').nth(1)?.trim().parse::<usize>().ok())
            .max();
        if let Some(c) = max_class {
            num_classes = num_classes.max(c + 1);
        }
        texts.push(text);
    }
    let class_map = ClassMap::numbered(num_classes)?;

    let items: Vec<Result<TrainItem<f64>>> = pairs
        .par_iter()
        .zip(&texts)
        .map(|(pair, text)| {
            let audio = io::read_wav::<f64>(&pair.wav)?;
            let grid = FrameGrid::new(cfg.label_hop, audio.duration())?;
            let clip = parse_labels(text, grid, &class_map)?;
            let features = extract(&audio, &cfg.stft)?;
            let target = encode(&clip, format)?;
            Ok(TrainItem { features, target })
        })
        .collect();
    let mut dataset = Vec::with_capacity(items.len());
    for item in items {
        dataset.push(item?);
    }

    let mut model = SeldModel::new(cfg.model_config(format, num_classes), seed)?;
    let train_cfg = TrainConfig {
        batch_size: cfg.batch_size,
        total_steps: cfg.total_steps,
        peak_lr: cfg.peak_lr,
        warmup_frac: cfg.warmup_frac,
        hold_frac: cfg.hold_frac,
        decay_floor: cfg.decay_floor,
        seed,
        loss: seld::model::LossConfig {
            weights: LossWeights {
                beta: cfg.weights.beta,
                gamma: cfg.weights.gamma,
                eta: cfg.weights.eta,
                lambda: cfg.weights.lambda,
            },
            sde_kind: cfg.sde_kind,
        },
    };
    let history = train_model(&mut model, &dataset, &train_cfg)?;

    let log_path = out.with_extension("log");
    let log: String = history
        .iter()
        .map(|r| r.to_log_line() + "\n")
        .collect();
    io::write_atomic(&log_path, log.as_bytes())?;

    let mut ckpt = Checkpoint {
        model,
        stft: cfg.stft,
        label_hop: cfg.label_hop,
    };
    ckpt.save(out)?;

    let first = history.first().map(|r| r.total).unwrap_or(0.0);
    let last = history.last().map(|r| r.total).unwrap_or(0.0);
    println!(
        "trained {} on {} clip(s) for {} steps: loss {first:.4e} -> {last:.4e}",
        format.name(),
        dataset.len(),
        history.len()
    );
    println!("checkpoint: {}", out.display());
    println!("log: {}", log_path.display());
    Ok(())
}

/// `predict`: run checkpoint(s) over WAV files and write decoded CSVs.
pub fn predict(
    cfg: &Config,
    model_path: &Path,
    second_model: Option<&Path>,
    joint: bool,
    input: &Path,
    out: &Path,
    dump_tensors: bool,
) -> Result<()> {
    if joint && second_model.is_none() {
        return Err(Error::validation(
            "--joint needs a second checkpoint via --model2".to_string(),
        ));
    }
    let pairs = collect_pairs(input, false)?;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;

    let mut ckpt = Checkpoint::<f64>::load(model_path)?;
    let classes = ClassMap::numbered(ckpt.model.config().num_classes)?;
    let mut second = match second_model {
        Some(path) => Some(Checkpoint::<f64>::load(path)?),
        None => None,
    };

    for pair in &pairs {
        let audio = io::read_wav::<f64>(&pair.wav)?;
        let clip = if joint {
            let sde_ckpt = second.as_mut().expect("checked above");
            predict_joint(&mut ckpt, sde_ckpt, &audio, &cfg.decode, &classes)?
        } else {
            predict_clip(&mut ckpt, &audio, &cfg.decode, &classes)?
        };
        let name = stem(&pair.wav);
        io::write_atomic(&out.join(format!("{name}.csv")), write_labels(&clip).as_bytes())?;
        if dump_tensors {
            let tensor = seld::model::predict_tensor(&mut ckpt, &audio)?;
            io::write_target_tensor(&out.join(format!("{name}.stt")), &tensor)?;
        }
    }
    println!("predicted {} clip(s) into {}", pairs.len(), out.display());
    Ok(())
}

/// Pairs ground-truth and prediction label files for evaluation.
fn evaluation_pairs(gt: &Path, pred: &Path) -> Result<Vec<(PathBuf, PathBuf)>> {
    if gt.is_file() && pred.is_file() {
        return Ok(vec![(gt.to_path_buf(), pred.to_path_buf())]);
    }
    if !gt.is_dir() || !pred.is_dir() {
        return Err(Error::validation(
            "evaluate takes two CSV files or two directories of CSVs".to_string(),
        ));
    }
    let mut names: Vec<String> = std::fs::read_dir(gt)
        .map_err(|e| Error::io(gt, e))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|ext| ext == "csv"))
        .filter(|p| p.file_name().is_some_and(|n| n != "manifest.csv"))
        .map(|p| p.file_name().unwrap().to_string_lossy().into_owned())
        .collect();
    names.sort();
    if names.is_empty() {
        return Err(Error::validation(format!(
            "no label CSVs in {}",
            gt.display()
        )));
    }
    names
        .into_iter()
        .map(|name| {
            let p = pred.join(&name);
            if !p.is_file() {
                return Err(Error::validation(format!(
                    "prediction for {name} missing in {}",
                    pred.display()
                )));
            }
            Ok((gt.join(&name), p))
        })
        .collect()
}

/// `evaluate`: score predictions against ground truth.
pub fn evaluate(
    cfg: &Config,
    gt: &Path,
    pred: &Path,
    kv_output: bool,
) -> Result<()> {
    let mut counts = MatchCounts::default();
    for (gt_path, pred_path) in evaluation_pairs(gt, pred)? {
        let gt_text = std::fs::read_to_string(&gt_path).map_err(|e| Error::io(&gt_path, e))?;
        let pred_text =
            std::fs::read_to_string(&pred_path).map_err(|e| Error::io(&pred_path, e))?;

        // Shared grid and class map inferred over the union of both files.
        let max_frame = gt_text
            .lines()
            .chain(pred_text.lines())
            .filter_map(|l| l.split(',').next()?.trim().parse::<usize>().ok())
            .max()
            .unwrap_or(0);
        let grid = FrameGrid::new(cfg.label_hop, (max_frame + 1) as f64 * cfg.label_hop)?;
        let max_class = gt_text
            .lines()
            .chain(pred_text.lines())
            .filter_map(|l| l.split(',').nth(1)?.trim().parse::<usize>().ok())
            .max()
            .unwrap_or(0);
        let classes = ClassMap::numbered(max_class + 1)?;

        let gt_clip = parse_labels::<f64>(&gt_text, grid, &classes)?;
        let pred_clip = parse_labels::<f64>(&pred_text, grid, &classes)?;
        counts.merge(match_and_count(&gt_clip, &pred_clip, &cfg.metrics)?);
    }

    let report = MetricsReport::from_counts(&counts);
    if kv_output {
        print!("{}", report_kv(&report));
    } else {
        print!("{}", report_table(&report, &cfg.metrics));
    }
    Ok(())
}

fn report_kv(r: &MetricsReport) -> String {
    format!(
        "f1={:.6}\ndoae_deg={:.6}\nrde={:.6}\nseld_score={:.6}\nsed_sde_score={:.6}\ntp={}\nfp={}\nfn={}\npairs={}\n",
        r.f1,
        r.doae_deg,
        r.rde,
        r.seld_score,
        r.sed_sde_score,
        r.true_positives,
        r.false_positives,
        r.false_negatives,
        r.matched_pairs
    )
}

fn report_table(r: &MetricsReport, thr: &seld::metrics::MetricThresholds) -> String {
    let mut out = String::new();
    out.push_str(&format!("{:<16}{:>10}\n", "metric", "value"));
    out.push_str(&format!("{:<16}{:>10.4}\n", "F1", r.f1));
    out.push_str(&format!("{:<16}{:>10.4}\n", "DOAE [deg]", r.doae_deg));
    out.push_str(&format!("{:<16}{:>10.4}\n", "RDE", r.rde));
    out.push_str(&format!("{:<16}{:>10.4}\n", "SELD score", r.seld_score));
    out.push_str(&format!("{:<16}{:>10.4}\n", "SED-SDE score", r.sed_sde_score));
    out.push_str(&format!(
        "{:<16}{:>10}\n",
        "TP/FP/FN",
        format!("{}/{}/{}", r.true_positives, r.false_positives, r.false_negatives)
    ));
    out.push_str(&format!("{:<16}{:>10}\n", "matched pairs", r.matched_pairs));
    let mut flags = Vec::new();
    if !thr.use_angular {
        flags.push("angular threshold off");
    }
    if !thr.use_distance {
        flags.push("distance threshold off");
    }
    if !flags.is_empty() {
        out.push_str(&format!("({})\n", flags.join(", ")));
    }
    out
}

/// `score`: composite-score arithmetic from raw metric values.
pub fn score(f1: f64, doae: Option<f64>, rde: Option<f64>) -> Result<()> {
    if !(0.0..=1.0).contains(&f1) {
        return Err(Error::validation(format!("--f1 must lie in [0, 1], got {f1}")));
    }
    if let Some(d) = doae {
        if !(0.0..=180.0).contains(&d) {
            return Err(Error::validation(format!(
                "--doae must lie in [0, 180] degrees, got {d}"
            )));
        }
    }
    if let Some(r) = rde {
        if r < 0.0 {
            return Err(Error::validation(format!("--rde must be nonnegative, got {r}")));
        }
    }
    match (doae, rde) {
        (Some(doae), Some(rde)) => {
            println!("seld_score={:.6}", seld::metrics::seld_score(f1, doae, rde));
        }
        (None, Some(rde)) => {
            println!("sed_sde_score={:.6}", seld::metrics::sed_sde_score(f1, rde));
        }
        _ => {
            return Err(Error::validation(
                "score needs --rde, plus --doae for the full composite".to_string(),
            ))
        }
    }
    Ok(())
}

/// Parses `--variants` values: `all`, comma lists (`0,3,5`) or ranges (`0..7`,
/// inclusive).
pub fn parse_variants(spec: &str) -> Result<Vec<u8>> {
    if spec == "all" {
        return Ok((0..AcsVariant::COUNT).collect());
    }
    if let Some((lo, hi)) = spec.split_once("..") {
        let lo: u8 = lo
            .trim()
            .parse()
            .map_err(|_| Error::validation(format!("bad variant range `{spec}`")))?;
        let hi: u8 = hi
            .trim()
            .parse()
            .map_err(|_| Error::validation(format!("bad variant range `{spec}`")))?;
        if lo > hi {
            return Err(Error::validation(format!("bad variant range `{spec}`")));
        }
        return Ok((lo..=hi).collect());
    }
    let mut seen = BTreeMap::new();
    for part in spec.split(',') {
        let id: u8 = part
            .trim()
            .parse()
            .map_err(|_| Error::validation(format!("bad variant id `{part}`")))?;
        seen.insert(id, ());
    }
    Ok(seen.into_keys().collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn variant_specs() {
        assert_eq!(parse_variants("all").unwrap(), vec![0, 1, 2, 3, 4, 5, 6, 7]);
        assert_eq!(parse_variants("0..3").unwrap(), vec![0, 1, 2, 3]);
        assert_eq!(parse_variants("5,1,5").unwrap(), vec![1, 5]);
        assert!(parse_variants("x").is_err());
        assert!(parse_variants("3..1").is_err());
    }
}
