//! Tool configuration: built-in defaults, overridden by an optional config
//! file of `key = value` lines, overridden again by `--set key=value` flags.
//! Unknown keys are rejected.

use std::path::Path;

use seld::features::{StftConfig, WindowKind};
use seld::losses::{LossWeights, SdeLossKind};
use seld::metrics::MetricThresholds;
use seld::model::ModelConfig;
use seld::repr::{DecodeConfig, ReprFormat};
use seld::sim::{SceneSpec, SourceKind};
use seld::types::{ClassMap, FrameGrid};
use seld::{Error, Result};

#[derive(Debug, Clone)]
pub struct Config {
    pub stft: StftConfig,
    pub decode: DecodeConfig,
    pub metrics: MetricThresholds,
    pub label_hop: f64,
    // Scene synthesis.
    pub sim_duration: f64,
    pub sim_events: usize,
    pub sim_classes: usize,
    pub sim_polyphony: usize,
    pub sim_distance: (f64, f64),
    pub sim_source: SourceKind,
    pub sim_sample_rate: u32,
    pub sim_moving: bool,
    // Network.
    pub conv_channels: Vec<usize>,
    pub pool_factors: Vec<(usize, usize)>,
    pub seq_hidden: usize,
    pub head_hidden: usize,
    // Trainer.
    pub batch_size: usize,
    pub total_steps: usize,
    pub peak_lr: f64,
    pub warmup_frac: f64,
    pub hold_frac: f64,
    pub decay_floor: f64,
    pub sde_kind: SdeLossKind,
    pub weights: LossWeights<f64>,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            stft: StftConfig::default(),
            decode: DecodeConfig::default(),
            metrics: MetricThresholds::default(),
            label_hop: FrameGrid::DEFAULT_LABEL_HOP,
            sim_duration: 10.0,
            sim_events: 5,
            sim_classes: 3,
            sim_polyphony: 2,
            sim_distance: (0.5, 5.0),
            sim_source: SourceKind::NoiseBurst,
            sim_sample_rate: 24000,
            sim_moving: false,
            conv_channels: vec![16, 32, 64],
            pool_factors: vec![(1, 2), (1, 2), (1, 2)],
            seq_hidden: 128,
            head_hidden: 128,
            batch_size: 8,
            total_steps: 2000,
            peak_lr: 0.001,
            warmup_frac: 0.1,
            hold_frac: 0.4,
            decay_floor: 0.05,
            sde_kind: SdeLossKind::default(),
            weights: LossWeights::default(),
        }
    }
}

impl Config {
    /// Applies a config file then `--set` overrides, in that order.
    pub fn load(file: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut cfg = Config::default();
        if let Some(path) = file {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            for (i, raw) in text.lines().enumerate() {
                let line = raw.split('#').next().unwrap_or("").trim();
                if line.is_empty() {
                    continue;
                }
                let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
                    line: i + 1,
                    msg: format!("expected `key = value`, got `{line}`"),
                })?;
                cfg.apply(key.trim(), value.trim())?;
            }
        }
        for pair in overrides {
            let (key, value) = pair.split_once('=').ok_or_else(|| {
                Error::validation(format!("--set takes key=value pairs, got `{pair}`"))
            })?;
            cfg.apply(key.trim(), value.trim())?;
        }
        Ok(cfg)
    }

    pub fn apply(&mut self, key: &str, value: &str) -> Result<()> {
        let bad = |what: &str| Error::validation(format!("bad value `{value}` for {what}"));
        match key {
            "stft.frame_len" => self.stft.frame_len = parse_f64(value, key)?,
            "stft.hop" => self.stft.hop = parse_f64(value, key)?,
            "stft.n_mels" => self.stft.n_mels = parse_usize(value, key)?,
            "stft.window" => {
                self.stft.window = match value {
                    "hann" => WindowKind::Hann,
                    "hamming" => WindowKind::Hamming,
                    _ => return Err(bad(key)),
                }
            }
            "decode.sed_threshold" => self.decode.sed_threshold = parse_f64(value, key)?,
            "decode.accdoa_threshold" => self.decode.accdoa_threshold = parse_f64(value, key)?,
            "decode.min_distance" => self.decode.min_distance = parse_f64(value, key)?,
            "metrics.angular_deg" => self.metrics.angular_deg = parse_f64(value, key)?,
            "metrics.relative_distance" => self.metrics.relative_distance = parse_f64(value, key)?,
            "label.hop" => self.label_hop = parse_f64(value, key)?,
            "sim.duration" => self.sim_duration = parse_f64(value, key)?,
            "sim.events" => self.sim_events = parse_usize(value, key)?,
            "sim.classes" => self.sim_classes = parse_usize(value, key)?,
            "sim.polyphony" => self.sim_polyphony = parse_usize(value, key)?,
            "sim.dmin" => self.sim_distance.0 = parse_f64(value, key)?,
            "sim.dmax" => self.sim_distance.1 = parse_f64(value, key)?,
            "sim.source" => self.sim_source = SourceKind::from_name(value)?,
            "sim.sample_rate" => self.sim_sample_rate = parse_usize(value, key)? as u32,
            "sim.moving" => self.sim_moving = parse_bool(value, key)?,
            "model.conv_channels" => self.conv_channels = parse_usize_list(value, key)?,
            "model.pool_factors" => self.pool_factors = parse_pool_list(value, key)?,
            "model.seq_hidden" => self.seq_hidden = parse_usize(value, key)?,
            "model.head_hidden" => self.head_hidden = parse_usize(value, key)?,
            "train.batch" => self.batch_size = parse_usize(value, key)?,
            "train.steps" => self.total_steps = parse_usize(value, key)?,
            "train.peak_lr" => self.peak_lr = parse_f64(value, key)?,
            "train.warmup_frac" => self.warmup_frac = parse_f64(value, key)?,
            "train.hold_frac" => self.hold_frac = parse_f64(value, key)?,
            "train.decay_floor" => self.decay_floor = parse_f64(value, key)?,
            "loss.sde" => self.sde_kind = SdeLossKind::from_name(value)?,
            "loss.beta" => self.weights.beta = parse_pair(value, key)?,
            "loss.gamma" => self.weights.gamma = parse_pair(value, key)?,
            "loss.eta" => self.weights.eta = parse_pair(value, key)?,
            "loss.lambda" => self.weights.lambda = parse_triple(value, key)?,
            _ => return Err(Error::validation(format!("unknown config key `{key}`"))),
        }
        Ok(())
    }

    pub fn scene_spec(&self, seed: u64) -> Result<SceneSpec> {
        Ok(SceneSpec {
            seed,
            duration: self.sim_duration,
            n_events: self.sim_events,
            classes: ClassMap::numbered(self.sim_classes)?,
            distance_range: self.sim_distance,
            polyphony_max: self.sim_polyphony,
            source_kind: self.sim_source,
            sample_rate: self.sim_sample_rate,
            label_hop: self.label_hop,
            moving: self.sim_moving,
        })
    }

    pub fn model_config(&self, format: ReprFormat, num_classes: usize) -> ModelConfig {
        ModelConfig {
            format,
            num_classes,
            n_mels: self.stft.n_mels,
            conv_channels: self.conv_channels.clone(),
            pool_factors: self.pool_factors.clone(),
            seq_hidden: self.seq_hidden,
            head_hidden: self.head_hidden,
        }
    }
}

fn parse_f64(value: &str, key: &str) -> Result<f64> {
    value
        .parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| Error::validation(format!("bad value `{value}` for {key}")))
}

fn parse_usize(value: &str, key: &str) -> Result<usize> {
    value
        .parse::<usize>()
        .map_err(|_| Error::validation(format!("bad value `{value}` for {key}")))
}

fn parse_bool(value: &str, key: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::validation(format!("bad value `{value}` for {key}"))),
    }
}

fn parse_usize_list(value: &str, key: &str) -> Result<Vec<usize>> {
    value.split(',').map(|v| parse_usize(v.trim(), key)).collect()
}

/// Pool factors as `t:f` pairs, e.g. `2:2,1:2`.
fn parse_pool_list(value: &str, key: &str) -> Result<Vec<(usize, usize)>> {
    value
        .split(',')
        .map(|pair| {
            let (t, f) = pair
                .trim()
                .split_once(':')
                .ok_or_else(|| Error::validation(format!("bad value `{pair}` for {key}")))?;
            Ok((parse_usize(t, key)?, parse_usize(f, key)?))
        })
        .collect()
}

fn parse_pair(value: &str, key: &str) -> Result<(f64, f64)> {
    let parts: Vec<&str> = value.split(',').map(str::trim).collect();
    if parts.len() != 2 {
        return Err(Error::validation(format!(
            "{key} takes two comma-separated weights, got `{value}`"
        )));
    }
    Ok((parse_f64(parts[0], key)?, parse_f64(parts[1], key)?))
}

fn parse_triple(value: &str, key: &str) -> Result<(f64, f64, f64)> {
    let parts: Vec<&str> = value.split(',').map(str::trim).collect();
    if parts.len() != 3 {
        return Err(Error::validation(format!(
            "{key} takes three comma-separated weights, got `{value}`"
        )));
    }
    Ok((
        parse_f64(parts[0], key)?,
        parse_f64(parts[1], key)?,
        parse_f64(parts[2], key)?,
    ))
}
