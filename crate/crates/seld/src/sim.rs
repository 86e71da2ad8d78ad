//! Synthetic anechoic point-source scenes with exact frame-level labels.
//!
//! Each event is a mono source (band-limited noise burst or tone complex)
//! encoded into SN3D FOA at a fixed direction with `1/d` distance gain:
//! `W += g*s`, `X += g*s*cos(az)cos(el)`, `Y += g*s*sin(az)cos(el)`,
//! `Z += g*s*sin(el)`. Rendering is deterministic given the spec's seed, so
//! scenes double as ground-truth oracles for the feature and augmentation
//! tests.

use std::path::{Path, PathBuf};

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::features::AudioClip;
use crate::io;
use crate::labels;
use crate::scalar::Scalar;
use crate::types::{doa_from_angles, ClassMap, Clip, EventAnnotation, FrameGrid};

/// Mono source material for an event.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SourceKind {
    /// Band-limited noise, 200 Hz - 8 kHz, 10 ms raised-cosine edges.
    #[default]
    NoiseBurst,
    /// A fundamental with a few harmonics, same edges.
    ToneComplex,
}

impl SourceKind {
    pub fn name(&self) -> &'static str {
        match self {
            SourceKind::NoiseBurst => "noise",
            SourceKind::ToneComplex => "tones",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "noise" => Ok(SourceKind::NoiseBurst),
            "tones" => Ok(SourceKind::ToneComplex),
            other => Err(Error::validation(format!(
                "unknown source kind `{other}` (expected noise or tones)"
            ))),
        }
    }
}

/// Parameters of one synthetic scene.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    pub seed: u64,
    pub duration: f64,
    pub n_events: usize,
    pub classes: ClassMap,
    pub distance_range: (f64, f64),
    pub polyphony_max: usize,
    pub source_kind: SourceKind,
    pub sample_rate: u32,
    pub label_hop: f64,
    /// When set, each event's DOA drifts linearly over its lifetime.
    pub moving: bool,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            duration: 10.0,
            n_events: 5,
            classes: ClassMap::numbered(3).expect("nonempty"),
            distance_range: (0.5, 5.0),
            polyphony_max: 2,
            source_kind: SourceKind::NoiseBurst,
            sample_rate: 24000,
            label_hop: FrameGrid::DEFAULT_LABEL_HOP,
            moving: false,
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.duration > 0.0) {
            return Err(Error::validation("scene duration must be positive"));
        }
        let (d_min, d_max) = self.distance_range;
        if !(d_min > 0.0) || d_max < d_min {
            return Err(Error::validation(format!(
                "distance range must satisfy 0 < min <= max, got [{d_min}, {d_max}]"
            )));
        }
        if self.polyphony_max == 0 || self.polyphony_max > 3 {
            return Err(Error::validation(format!(
                "polyphony must lie in 1..=3, got {}",
                self.polyphony_max
            )));
        }
        if self.sample_rate == 0 {
            return Err(Error::validation("sample rate must be positive"));
        }
        if self.duration < MIN_EVENT_SECONDS {
            return Err(Error::validation(format!(
                "events of at least {MIN_EVENT_SECONDS} s cannot fit in a {} s scene",
                self.duration
            )));
        }
        Ok(())
    }

    pub fn grid(&self) -> Result<FrameGrid> {
        FrameGrid::new(self.label_hop, self.duration)
    }
}

/// Audio plus exactly matching labels.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderedScene<S: Scalar> {
    pub audio: AudioClip<S>,
    pub labels: Clip<S>,
}

const MIN_EVENT_SECONDS: f64 = 0.3;
const MAX_EVENT_SECONDS: f64 = 1.2;
const EDGE_SECONDS: f64 = 0.010;
const NOISE_BAND: (f64, f64) = (200.0, 8000.0);
/// Reference distance for the 1/d gain law, in meters.
const REFERENCE_DISTANCE: f64 = 1.0;

struct Event {
    class_id: usize,
    onset: usize,
    signal: Vec<f64>,
    azimuth: (f64, f64),
    elevation: (f64, f64),
    distance: f64,
}

impl Event {
    fn end(&self) -> usize {
        self.onset + self.signal.len()
    }

    fn direction_at(&self, sample_in_event: usize) -> (f64, f64) {
        if self.signal.len() <= 1 {
            return (self.azimuth.0, self.elevation.0);
        }
        let t = sample_in_event as f64 / (self.signal.len() - 1) as f64;
        (
            self.azimuth.0 + (self.azimuth.1 - self.azimuth.0) * t,
            self.elevation.0 + (self.elevation.1 - self.elevation.0) * t,
        )
    }
}

/// Renders one scene: FOA audio plus labels on the label grid.
pub fn render<S: Scalar>(spec: &SceneSpec) -> Result<RenderedScene<S>> {
    spec.validate()?;
    let grid = spec.grid()?;
    let sr = spec.sample_rate as f64;
    let total_samples = (spec.duration * sr).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let events = place_events(spec, &mut rng, total_samples)?;

    // Mix events into the FOA channels.
    let mut audio = Array2::<f64>::zeros((4, total_samples));
    for ev in &events {
        let gain = REFERENCE_DISTANCE / ev.distance;
        for (i, &s) in ev.signal.iter().enumerate() {
            let idx = ev.onset + i;
            if idx >= total_samples {
                break;
            }
            let (az, el) = ev.direction_at(i);
            let g = gain * s;
            audio[(0, idx)] += g;
            audio[(1, idx)] += g * az.cos() * el.cos();
            audio[(2, idx)] += g * az.sin() * el.cos();
            audio[(3, idx)] += g * el.sin();
        }
    }

    // Labels: a frame is active when the event contributes nonzero energy to it.
    let hop_samples = (spec.label_hop * sr).round() as usize;
    let mut annotations = Vec::new();
    for ev in &events {
        let first_frame = ev.onset / hop_samples;
        let last_frame = ((ev.end() - 1).min(total_samples - 1)) / hop_samples;
        for frame in first_frame..=last_frame.min(grid.num_frames() - 1) {
            let frame_start = frame * hop_samples;
            let frame_end = frame_start + hop_samples;
            let lo = frame_start.max(ev.onset);
            let hi = frame_end.min(ev.end()).min(total_samples);
            let energy: f64 = (lo..hi)
                .map(|idx| {
                    let s = ev.signal[idx - ev.onset];
                    s * s
                })
                .sum();
            if energy <= 0.0 {
                continue;
            }
            // Label the DOA at the frame's midpoint within the event.
            let mid = (lo + hi - 1) / 2 - ev.onset;
            let (az, el) = ev.direction_at(mid);
            annotations.push(
                EventAnnotation::ground_truth(
                    frame,
                    ev.class_id,
                    0,
                    doa_from_angles(S::cast(az), S::cast(el)),
                    S::cast(ev.distance),
                )
                .expect("simulator produces valid annotations"),
            );
        }
    }

    let samples = Array2::from_shape_fn((4, total_samples), |(c, i)| S::cast(audio[(c, i)]));
    Ok(RenderedScene {
        audio: AudioClip::new(samples, spec.sample_rate)?,
        labels: Clip::new(annotations, grid, spec.classes.clone())?,
    })
}

fn place_events(spec: &SceneSpec, rng: &mut ChaCha8Rng, total_samples: usize) -> Result<Vec<Event>> {
    let sr = spec.sample_rate as f64;
    let hop_samples = (spec.label_hop * sr).round() as usize;
    let num_frames = spec.grid()?.num_frames();
    let num_classes = spec.classes.len();

    // Per-frame occupancy: global polyphony and one event per class.
    let mut global = vec![0usize; num_frames];
    let mut per_class = vec![vec![false; num_frames]; num_classes];
    let mut events = Vec::new();

    'outer: for _ in 0..spec.n_events {
        for _attempt in 0..64 {
            let class_id = rng.gen_range(0..num_classes);
            let max_dur = MAX_EVENT_SECONDS.min(spec.duration);
            let dur = rng.gen_range(MIN_EVENT_SECONDS..=max_dur);
            let n = ((dur * sr).round() as usize).min(total_samples);
            let onset = rng.gen_range(0..=(total_samples - n));

            let first = onset / hop_samples;
            let last = ((onset + n - 1) / hop_samples).min(num_frames - 1);
            let blocked = (first..=last).any(|f| {
                per_class[class_id][f] || global[f] >= spec.polyphony_max
            });
            if blocked {
                continue;
            }
            for f in first..=last {
                per_class[class_id][f] = true;
                global[f] += 1;
            }

            let azimuth0 = rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI);
            let elevation0 = rng.gen_range(-1.0_f64..1.0).asin();
            let (azimuth1, elevation1) = if spec.moving {
                (
                    azimuth0 + rng.gen_range(-0.8..0.8),
                    (elevation0 + rng.gen_range(-0.4..0.4)).clamp(-1.5, 1.5),
                )
            } else {
                (azimuth0, elevation0)
            };
            let distance = rng.gen_range(spec.distance_range.0..=spec.distance_range.1);
            let signal = match spec.source_kind {
                SourceKind::NoiseBurst => noise_burst(rng, n, sr),
                SourceKind::ToneComplex => tone_complex(rng, n, sr),
            };
            events.push(Event {
                class_id,
                onset,
                signal,
                azimuth: (azimuth0, azimuth1),
                elevation: (elevation0, elevation1),
                distance,
            });
            continue 'outer;
        }
        // Scene too crowded for another event; keep what fits.
        break;
    }
    Ok(events)
}

/// Band-limited white noise with raised-cosine edges, peak-normalized.
fn noise_burst(rng: &mut ChaCha8Rng, n: usize, sr: f64) -> Vec<f64> {
    use rustfft::num_complex::Complex64;
    let mut spectrum: Vec<Complex64> = vec![Complex64::new(0.0, 0.0); n];
    for (k, slot) in spectrum.iter_mut().enumerate().take(n / 2 + 1) {
        let freq = k as f64 * sr / n as f64;
        if freq >= NOISE_BAND.0 && freq <= NOISE_BAND.1 {
            let phase = rng.gen_range(0.0..std::f64::consts::TAU);
            *slot = Complex64::new(phase.cos(), phase.sin());
        }
    }
    // Hermitian symmetry for a real signal.
    for k in 1..n.div_ceil(2) {
        spectrum[n - k] = spectrum[k].conj();
    }
    rustfft::FftPlanner::new()
        .plan_fft_inverse(n)
        .process(&mut spectrum);
    let mut signal: Vec<f64> = spectrum.iter().map(|z| z.re).collect();
    let peak = signal.iter().fold(0.0_f64, |m, s| m.max(s.abs())).max(1e-12);
    for s in &mut signal {
        *s *= 0.5 / peak;
    }
    apply_edges(&mut signal, sr);
    signal
}

/// Random fundamental in 200-800 Hz with four harmonics.
fn tone_complex(rng: &mut ChaCha8Rng, n: usize, sr: f64) -> Vec<f64> {
    let f0 = rng.gen_range(200.0..800.0);
    let phases: Vec<f64> = (0..4).map(|_| rng.gen_range(0.0..std::f64::consts::TAU)).collect();
    let mut signal: Vec<f64> = (0..n)
        .map(|i| {
            let t = i as f64 / sr;
            (0..4)
                .map(|h| {
                    let amp = 0.5 / (h + 1) as f64;
                    amp * (std::f64::consts::TAU * f0 * (h + 1) as f64 * t + phases[h]).sin()
                })
                .sum()
        })
        .collect();
    let peak = signal.iter().fold(0.0_f64, |m, s| m.max(s.abs())).max(1e-12);
    for s in &mut signal {
        *s *= 0.5 / peak;
    }
    apply_edges(&mut signal, sr);
    signal
}

fn apply_edges(signal: &mut [f64], sr: f64) {
    let edge = ((EDGE_SECONDS * sr) as usize).min(signal.len() / 2).max(1);
    for i in 0..edge {
        let w = 0.5 - 0.5 * (std::f64::consts::PI * i as f64 / edge as f64).cos();
        signal[i] *= w;
        let j = signal.len() - 1 - i;
        signal[j] *= w;
    }
}

/// Entry in a rendered dataset manifest.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub wav: PathBuf,
    pub csv: PathBuf,
}

/// Renders `n_clips` scenes to `out_dir` as WAV + CSV pairs plus a manifest.
///
/// Per-clip seeds derive from the template's seed, so the whole dataset is
/// reproducible bit-for-bit from (template, n_clips).
pub fn render_dataset<S: Scalar>(
    template: &SceneSpec,
    n_clips: usize,
    out_dir: &Path,
) -> Result<Vec<ManifestEntry>> {
    template.validate()?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut entries = Vec::with_capacity(n_clips);
    for i in 0..n_clips {
        let spec = SceneSpec {
            seed: derive_seed(template.seed, i as u64),
            ..template.clone()
        };
        let scene = render::<S>(&spec)?;
        let wav = out_dir.join(format!("clip_{i:04}.wav"));
        let csv = out_dir.join(format!("clip_{i:04}.csv"));
        io::write_wav(&wav, &scene.audio)?;
        io::write_atomic(&csv, labels::write_labels(&scene.labels).as_bytes())?;
        entries.push(ManifestEntry { wav, csv });
    }
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
    io::write_atomic(&out_dir.join("manifest.csv"), manifest.as_bytes())?;
    Ok(entries)
}

/// SplitMix64 step, used to derive independent per-clip seeds.
fn derive_seed(master: u64, index: u64) -> u64 {
    let mut z = master.wrapping_add(index.wrapping_add(1).wrapping_mul(0x9E3779B97F4A7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

/// Reads a dataset manifest back as (wav, csv) path pairs.
pub fn read_manifest(dir: &Path) -> Result<Vec<ManifestEntry>> {
    let path = dir.join("manifest.csv");
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let mut entries = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let (wav, csv) = line.split_once(',').ok_or_else(|| Error::Parse {
            line: i + 1,
            msg: "manifest rows are `wav,csv`".to_string(),
        })?;
        entries.push(ManifestEntry {
            wav: dir.join(wav.trim()),
            csv: dir.join(csv.trim()),
        });
    }
    Ok(entries)
}
