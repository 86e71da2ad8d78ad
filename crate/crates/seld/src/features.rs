//! Feature front-end: 4-channel FOA waveforms to the `T_f x 7 x F` input
//! tensor of 4 log-Mel planes and 3 intensity-vector planes.

use ndarray::{Array2, Array3};
use num_complex::Complex;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Number of FOA channels, ACN order W, X, Y, Z.
pub const FOA_CHANNELS: usize = 4;
/// Feature planes: 4 log-Mel + 3 intensity-vector.
pub const FEATURE_CHANNELS: usize = 7;

/// Additive floor inside the log of the log-Mel planes.
pub const LOG_EPS: f64 = 1e-10;
/// Denominator guard in the per-bin intensity-vector normalization.
pub const IV_NORM_EPS: f64 = 1e-8;

/// 4-channel first-order Ambisonics clip (ACN order W, X, Y, Z; SN3D).
#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip<S: Scalar> {
    samples: Array2<S>,
    sample_rate: u32,
}

impl<S: Scalar> AudioClip<S> {
    pub fn new(samples: Array2<S>, sample_rate: u32) -> Result<Self> {
        if samples.nrows() != FOA_CHANNELS {
            return Err(Error::validation(format!(
                "FOA clip needs {FOA_CHANNELS} channels, got {}",
                samples.nrows()
            )));
        }
        if samples.ncols() == 0 {
            return Err(Error::validation("audio clip has no samples"));
        }
        if sample_rate == 0 {
            return Err(Error::validation("sample rate must be positive"));
        }
        if samples.iter().any(|v| !v.is_finite()) {
            return Err(Error::validation("audio contains non-finite samples"));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    pub fn samples(&self) -> &Array2<S> {
        &self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn num_samples(&self) -> usize {
        self.samples.ncols()
    }

    pub fn duration(&self) -> f64 {
        self.num_samples() as f64 / self.sample_rate as f64
    }
}

/// Analysis window family (periodic form).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum WindowKind {
    #[default]
    Hann,
    Hamming,
}

impl WindowKind {
    pub fn coefficients<S: Scalar>(self, len: usize) -> Vec<S> {
        let (a0, a1) = match self {
            WindowKind::Hann => (0.5, 0.5),
            WindowKind::Hamming => (0.54, 0.46),
        };
        (0..len)
            .map(|n| {
                let phase = std::f64::consts::TAU * n as f64 / len as f64;
                S::cast(a0 - a1 * phase.cos())
            })
            .collect()
    }
}

/// STFT / mel-front-end configuration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StftConfig {
    /// Analysis frame length in seconds.
    pub frame_len: f64,
    /// Hop between frames in seconds.
    pub hop: f64,
    pub window: WindowKind,
    /// Number of mel bins `F`.
    pub n_mels: usize,
}

impl Default for StftConfig {
    fn default() -> Self {
        Self {
            frame_len: 0.040,
            hop: 0.020,
            window: WindowKind::Hann,
            n_mels: 64,
        }
    }
}

impl StftConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.frame_len > 0.0) || !(self.hop > 0.0) || self.hop > self.frame_len {
            return Err(Error::validation(format!(
                "need 0 < hop <= frame_len, got hop {} and frame_len {}",
                self.hop, self.frame_len
            )));
        }
        if self.n_mels < 8 {
            return Err(Error::validation(format!(
                "need at least 8 mel bins, got {}",
                self.n_mels
            )));
        }
        Ok(())
    }

    pub fn frame_samples(&self, sample_rate: u32) -> usize {
        (self.frame_len * sample_rate as f64).round() as usize
    }

    pub fn hop_samples(&self, sample_rate: u32) -> usize {
        ((self.hop * sample_rate as f64).round() as usize).max(1)
    }
}

/// Complex STFT of a FOA clip: `(4, T_f, K)` bins with `K = N/2 + 1`.
#[derive(Debug, Clone)]
pub struct Spectrogram<S: Scalar> {
    pub data: Array3<Complex<S>>,
    pub sample_rate: u32,
    pub frame_samples: usize,
    pub hop_samples: usize,
}

impl<S: Scalar> Spectrogram<S> {
    pub fn num_frames(&self) -> usize {
        self.data.shape()[1]
    }

    pub fn num_bins(&self) -> usize {
        self.data.shape()[2]
    }
}

/// Short-time Fourier transform of all four channels.
///
/// Frame `t` covers samples `[t*hop, t*hop + N)`; the frame count is
/// `floor((S - N)/hop) + 1` and any samples a frame would need past the end
/// of the clip are read as zero. Frames are windowed, unnormalized DFTs.
pub fn stft<S: Scalar>(clip: &AudioClip<S>, cfg: &StftConfig) -> Result<Spectrogram<S>> {
    cfg.validate()?;
    let n = cfg.frame_samples(clip.sample_rate());
    let hop = cfg.hop_samples(clip.sample_rate());
    if n < 2 {
        return Err(Error::validation("frame length shorter than two samples"));
    }
    let total = clip.num_samples();
    if total < n {
        return Err(Error::validation(format!(
            "clip of {total} samples is shorter than one {n}-sample frame"
        )));
    }
    let num_frames = (total - n) / hop + 1;
    let num_bins = n / 2 + 1;
    let window: Vec<S> = cfg.window.coefficients(n);

    let fft = FftPlanner::<S>::new().plan_fft_forward(n);
    let mut data = Array3::zeros((FOA_CHANNELS, num_frames, num_bins));
    let mut buf: Vec<Complex<S>> = vec![Complex::new(S::zero(), S::zero()); n];

    for ch in 0..FOA_CHANNELS {
        for t in 0..num_frames {
            let start = t * hop;
            for i in 0..n {
                let sample = if start + i < total {
                    clip.samples()[(ch, start + i)]
                } else {
                    S::zero()
                };
                buf[i] = Complex::new(sample * window[i], S::zero());
            }
            fft.process(&mut buf);
            for k in 0..num_bins {
                data[(ch, t, k)] = buf[k];
            }
        }
    }

    Ok(Spectrogram {
        data,
        sample_rate: clip.sample_rate(),
        frame_samples: n,
        hop_samples: hop,
    })
}

/// Triangular mel filterbank (HTK mel scale), `n_mels x K`, peak weight 1.
///
/// Triangles span `[0, sample_rate/2]`; constructed in `f64` and cast to the
/// working precision afterwards.
pub fn mel_filterbank<S: Scalar>(n_mels: usize, num_bins: usize, n_fft: usize, sample_rate: u32) -> Array2<S> {
    let hz_to_mel = |f: f64| 2595.0 * (1.0 + f / 700.0).log10();
    let mel_to_hz = |m: f64| 700.0 * (10f64.powf(m / 2595.0) - 1.0);

    let nyquist = sample_rate as f64 / 2.0;
    let mel_max = hz_to_mel(nyquist);
    let points: Vec<f64> = (0..n_mels + 2)
        .map(|i| mel_to_hz(mel_max * i as f64 / (n_mels + 1) as f64))
        .collect();

    let mut fb = Array2::zeros((n_mels, num_bins));
    for m in 0..n_mels {
        let (lo, center, hi) = (points[m], points[m + 1], points[m + 2]);
        for k in 0..num_bins {
            let f = k as f64 * sample_rate as f64 / n_fft as f64;
            let rise = (f - lo) / (center - lo);
            let fall = (hi - f) / (hi - center);
            let w = rise.min(fall).max(0.0);
            if w > 0.0 {
                fb[(m, k)] = S::cast(w);
            }
        }
    }
    fb
}

/// 4-channel log-Mel planes `(4, T_f, F)`: `ln(filterbank(|X|^2) + eps)`.
pub fn log_mel<S: Scalar>(spec: &Spectrogram<S>, cfg: &StftConfig) -> Array3<S> {
    let fb = mel_filterbank(
        cfg.n_mels,
        spec.num_bins(),
        spec.frame_samples,
        spec.sample_rate,
    );
    log_mel_with(spec, &fb)
}

fn log_mel_with<S: Scalar>(spec: &Spectrogram<S>, fb: &Array2<S>) -> Array3<S> {
    let (n_mels, t_f) = (fb.nrows(), spec.num_frames());
    let eps = S::cast(LOG_EPS);
    let mut out = Array3::zeros((FOA_CHANNELS, t_f, n_mels));
    for ch in 0..FOA_CHANNELS {
        for t in 0..t_f {
            for m in 0..n_mels {
                let mut acc = S::zero();
                for k in 0..spec.num_bins() {
                    let w = fb[(m, k)];
                    if w > S::zero() {
                        let z = spec.data[(ch, t, k)];
                        acc += w * (z.re * z.re + z.im * z.im);
                    }
                }
                out[(ch, t, m)] = (acc + eps).ln();
            }
        }
    }
    out
}

/// 3-channel intensity-vector planes `(3, T_f, F)`.
///
/// Per time-frequency bin `I = Re{conj(W) * (X, Y, Z)}`, aggregated into mel
/// bins with the same filterbank as the log-Mel planes, then normalized per
/// mel bin by `|I| + eps` so every 3-vector has norm below 1.
pub fn intensity_vectors<S: Scalar>(spec: &Spectrogram<S>, cfg: &StftConfig) -> Array3<S> {
    let fb = mel_filterbank(
        cfg.n_mels,
        spec.num_bins(),
        spec.frame_samples,
        spec.sample_rate,
    );
    intensity_vectors_with(spec, &fb)
}

fn intensity_vectors_with<S: Scalar>(spec: &Spectrogram<S>, fb: &Array2<S>) -> Array3<S> {
    let (n_mels, t_f) = (fb.nrows(), spec.num_frames());
    let eps = S::cast(IV_NORM_EPS);
    let mut out = Array3::zeros((3, t_f, n_mels));
    for t in 0..t_f {
        for m in 0..n_mels {
            let mut iv = [S::zero(); 3];
            for k in 0..spec.num_bins() {
                let w = fb[(m, k)];
                if w > S::zero() {
                    let omni = spec.data[(0, t, k)];
                    for (axis, slot) in iv.iter_mut().enumerate() {
                        let dipole = spec.data[(axis + 1, t, k)];
                        // Re{conj(W) * V}
                        *slot += w * (omni.re * dipole.re + omni.im * dipole.im);
                    }
                }
            }
            let norm = (iv[0] * iv[0] + iv[1] * iv[1] + iv[2] * iv[2]).sqrt();
            for (axis, v) in iv.iter().enumerate() {
                out[(axis, t, m)] = *v / (norm + eps);
            }
        }
    }
    out
}

/// Stacked feature tensor `(T_f, 7, F)`: log-Mel W,X,Y,Z then IV x,y,z.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralFeatures<S: Scalar> {
    pub data: Array3<S>,
    /// STFT hop in seconds, for aligning features to the label grid.
    pub hop: f64,
}

impl<S: Scalar> SpectralFeatures<S> {
    pub fn num_frames(&self) -> usize {
        self.data.shape()[0]
    }

    pub fn num_mels(&self) -> usize {
        self.data.shape()[2]
    }
}

/// Full front-end: STFT, log-Mel and IV planes stacked into `CH = 7`.
pub fn extract<S: Scalar>(clip: &AudioClip<S>, cfg: &StftConfig) -> Result<SpectralFeatures<S>> {
    let spec = stft(clip, cfg)?;
    let fb = mel_filterbank(
        cfg.n_mels,
        spec.num_bins(),
        spec.frame_samples,
        spec.sample_rate,
    );
    let lm = log_mel_with(&spec, &fb);
    let iv = intensity_vectors_with(&spec, &fb);

    let t_f = spec.num_frames();
    let mut data = Array3::zeros((t_f, FEATURE_CHANNELS, cfg.n_mels));
    for t in 0..t_f {
        for m in 0..cfg.n_mels {
            for ch in 0..FOA_CHANNELS {
                data[(t, ch, m)] = lm[(ch, t, m)];
            }
            for axis in 0..3 {
                data[(t, FOA_CHANNELS + axis, m)] = iv[(axis, t, m)];
            }
        }
    }
    Ok(SpectralFeatures {
        data,
        hop: cfg.hop,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn zero_clip(sr: u32, n: usize) -> AudioClip<f64> {
        AudioClip::new(Array2::zeros((4, n)), sr).unwrap()
    }

    fn random_clip(rng: &mut ChaCha8Rng, sr: u32, n: usize) -> AudioClip<f64> {
        let samples = Array2::from_shape_fn((4, n), |_| rng.gen_range(-1.0..1.0));
        AudioClip::new(samples, sr).unwrap()
    }

    /// Naive O(N^2) DFT of one windowed frame, f64 accumulation.
    fn dft_frame(frame: &[f64], window: &[f64]) -> Vec<Complex<f64>> {
        let n = frame.len();
        let mut out = Vec::with_capacity(n / 2 + 1);
        for k in 0..=n / 2 {
            let mut acc = Complex::new(0.0, 0.0);
            for (i, (&x, &w)) in frame.iter().zip(window).enumerate() {
                let phase = -std::f64::consts::TAU * k as f64 * i as f64 / n as f64;
                acc += Complex::new(phase.cos(), phase.sin()) * (x * w);
            }
            out.push(acc);
        }
        out
    }

    #[test]
    fn stft_of_silence_is_zero() {
        let clip = zero_clip(8000, 4000);
        let spec = stft(&clip, &StftConfig::default()).unwrap();
        assert!(spec.data.iter().all(|z| z.re == 0.0 && z.im == 0.0));
    }

    #[test]
    fn stft_rejects_short_clips() {
        let clip = zero_clip(8000, 100);
        assert!(stft(&clip, &StftConfig::default()).is_err());
    }

    #[test]
    fn stft_matches_naive_dft() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let sr = 8000;
        let clip = random_clip(&mut rng, sr, sr as usize / 2);
        let cfg = StftConfig::default();
        let spec = stft(&clip, &cfg).unwrap();
        let n = cfg.frame_samples(sr);
        let hop = cfg.hop_samples(sr);
        let window: Vec<f64> = cfg.window.coefficients(n);

        for ch in 0..4 {
            for t in 0..spec.num_frames() {
                let frame: Vec<f64> = (0..n)
                    .map(|i| clip.samples()[(ch, t * hop + i)])
                    .collect();
                let oracle = dft_frame(&frame, &window);
                let mut err = 0.0_f64;
                let mut ref_norm = 0.0_f64;
                for k in 0..spec.num_bins() {
                    let d = spec.data[(ch, t, k)] - oracle[k];
                    err += d.norm_sqr();
                    ref_norm += oracle[k].norm_sqr();
                }
                assert!(
                    err.sqrt() <= 1e-6 * ref_norm.sqrt(),
                    "frame {t} channel {ch}: relative error {}",
                    err.sqrt() / ref_norm.sqrt()
                );
            }
        }
    }

    #[test]
    fn sinusoid_at_exact_bin_concentrates_energy() {
        let sr = 8000;
        let cfg = StftConfig::default();
        let n = cfg.frame_samples(sr); // 320
        let k0 = 40;
        let freq = k0 as f64 * sr as f64 / n as f64;
        let samples = Array2::from_shape_fn((4, n * 4), |(_, i)| {
            (std::f64::consts::TAU * freq * i as f64 / sr as f64).sin()
        });
        let clip = AudioClip::new(samples, sr).unwrap();
        let spec = stft(&clip, &cfg).unwrap();

        // Hann main lobe spans k0 +/- 1; everything else should be negligible.
        let mut lobe = 0.0;
        let mut total = 0.0;
        for k in 0..spec.num_bins() {
            let e = spec.data[(0, 0, k)].norm_sqr();
            total += e;
            if (k as isize - k0 as isize).abs() <= 1 {
                lobe += e;
            }
        }
        assert!(lobe / total >= 0.99, "lobe fraction {}", lobe / total);
    }

    #[test]
    fn log_mel_of_silence_is_log_eps() {
        let clip = zero_clip(8000, 2000);
        let cfg = StftConfig::default();
        let spec = stft(&clip, &cfg).unwrap();
        let lm = log_mel(&spec, &cfg);
        let expected = LOG_EPS.ln();
        assert!(lm.iter().all(|&v| (v - expected).abs() < 1e-12));
    }

    #[test]
    fn filterbank_rows_all_cover_bins() {
        for (sr, n) in [(24000u32, 960usize), (8000, 320)] {
            let fb = mel_filterbank::<f64>(64, n / 2 + 1, n, sr);
            for m in 0..64 {
                let sum: f64 = fb.row(m).sum();
                assert!(sum > 0.0, "mel row {m} empty for sr {sr}");
            }
        }
    }

    #[test]
    fn impulse_bin_lights_up_only_overlapping_mels() {
        let sr = 8000;
        let n = 320;
        let num_bins = n / 2 + 1;
        let fb = mel_filterbank::<f64>(64, num_bins, n, sr);
        let k_hit = 57;
        let mut data = Array3::zeros((4, 1, num_bins));
        data[(0, 0, k_hit)] = Complex::new(1.0, 0.0);
        let spec = Spectrogram {
            data,
            sample_rate: sr,
            frame_samples: n,
            hop_samples: 160,
        };
        let lm = log_mel(&spec, &StftConfig::default());
        let silent = LOG_EPS.ln();
        for m in 0..64 {
            let touched = fb[(m, k_hit)] > 0.0;
            let lit = (lm[(0, 0, m)] - silent).abs() > 1e-9;
            assert_eq!(touched, lit, "mel bin {m}");
        }
    }

    #[test]
    fn iv_of_silence_is_zero_and_norm_bounded() {
        let clip = zero_clip(8000, 2000);
        let cfg = StftConfig::default();
        let spec = stft(&clip, &cfg).unwrap();
        let iv = intensity_vectors(&spec, &cfg);
        assert!(iv.iter().all(|&v| v == 0.0));

        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let clip = random_clip(&mut rng, 8000, 4000);
        let spec = stft(&clip, &cfg).unwrap();
        let iv = intensity_vectors(&spec, &cfg);
        for t in 0..spec.num_frames() {
            for m in 0..cfg.n_mels {
                let norm2: f64 = (0..3).map(|a| iv[(a, t, m)] * iv[(a, t, m)]).sum();
                assert!(norm2.sqrt() <= 1.0 + 1e-9);
            }
        }
    }

    #[test]
    fn negating_dipoles_flips_iv_sign() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let clip = random_clip(&mut rng, 8000, 2000);
        let mut flipped = clip.samples().clone();
        for ch in 1..4 {
            for i in 0..flipped.ncols() {
                flipped[(ch, i)] = -flipped[(ch, i)];
            }
        }
        let flipped = AudioClip::new(flipped, 8000).unwrap();
        let cfg = StftConfig::default();
        let iv_a = intensity_vectors(&stft(&clip, &cfg).unwrap(), &cfg);
        let iv_b = intensity_vectors(&stft(&flipped, &cfg).unwrap(), &cfg);
        for (a, b) in iv_a.iter().zip(iv_b.iter()) {
            assert!((a + b).abs() < 1e-12);
        }
    }

    #[test]
    fn extract_shape_follows_framing_rule() {
        // 10 s at 24 kHz, defaults: T_f = (240000 - 960)/480 + 1 = 499.
        let clip = zero_clip(24000, 240_000);
        let cfg = StftConfig::default();
        let feat = extract(&clip, &cfg).unwrap();
        assert_eq!(feat.data.shape(), &[499, 7, 64]);
        let silent = LOG_EPS.ln();
        for t in 0..feat.num_frames() {
            for m in 0..64 {
                for ch in 0..4 {
                    assert!((feat.data[(t, ch, m)] - silent).abs() < 1e-12);
                }
                for ch in 4..7 {
                    assert_eq!(feat.data[(t, ch, m)], 0.0);
                }
            }
        }
    }

    #[test]
    fn extract_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let clip = random_clip(&mut rng, 8000, 4000);
        let cfg = StftConfig::default();
        let a = extract(&clip, &cfg).unwrap();
        let b = extract(&clip, &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn concatenation_preserves_interior_frames() {
        // With hop-aligned segment lengths, every frame fully inside a segment
        // matches that segment's own features; only the seam frame differs.
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let sr = 8000;
        let cfg = StftConfig::default();
        let n = cfg.frame_samples(sr);
        let hop = cfg.hop_samples(sr);
        let len_a = n + 10 * hop;
        let len_b = n + 7 * hop;
        let a = random_clip(&mut rng, sr, len_a);
        let b = random_clip(&mut rng, sr, len_b);
        let mut joined = Array2::zeros((4, len_a + len_b));
        for ch in 0..4 {
            for i in 0..len_a {
                joined[(ch, i)] = a.samples()[(ch, i)];
            }
            for i in 0..len_b {
                joined[(ch, len_a + i)] = b.samples()[(ch, i)];
            }
        }
        let joined = AudioClip::new(joined, sr).unwrap();

        let fa = extract(&a, &cfg).unwrap();
        let fb = extract(&b, &cfg).unwrap();
        let fj = extract(&joined, &cfg).unwrap();

        let ta = fa.num_frames();
        let tb = fb.num_frames();
        let tj = fj.num_frames();
        for t in 0..ta {
            for ch in 0..7 {
                for m in 0..cfg.n_mels {
                    assert_eq!(fj.data[(t, ch, m)], fa.data[(t, ch, m)]);
                }
            }
        }
        for t in 0..tb {
            for ch in 0..7 {
                for m in 0..cfg.n_mels {
                    assert_eq!(fj.data[(tj - tb + t, ch, m)], fb.data[(t, ch, m)]);
                }
            }
        }
    }
}
