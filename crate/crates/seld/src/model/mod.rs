//! Toy-scale trainable network with the multi-branch head structure: a small
//! convolutional encoder over (time, mel) maps, one recurrent layer, and two
//! fully-connected layers per output branch with the format's activation.
//!
//! The encoder output is mean-pooled over adaptive time segments so the
//! branch outputs always land on the label grid, whatever the clip length.

mod layers;
mod train;

pub use train::{learning_rate, train, Adam, LossConfig, StepRecord, TrainConfig, TrainItem};

use std::path::Path;

use ndarray::{Array2, Array3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::features::{AudioClip, SpectralFeatures, StftConfig, WindowKind, FEATURE_CHANNELS};
use crate::repr::{DecodeConfig, ReprFormat, TargetTensor};
use crate::scalar::Scalar;
use crate::types::{ClassMap, Clip, FrameGrid};
use layers::{AvgPool2d, BranchActivation, Conv2d, Gru, Linear, Relu2, Relu3, SegmentPoolFlatten};

/// Network hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub format: ReprFormat,
    pub num_classes: usize,
    /// Mel bins the feature front-end produces.
    pub n_mels: usize,
    /// Output channels per conv stage.
    pub conv_channels: Vec<usize>,
    /// (time, frequency) mean-pool factors per conv stage.
    pub pool_factors: Vec<(usize, usize)>,
    /// Recurrent layer width.
    pub seq_hidden: usize,
    /// Width of the first FC layer in every branch head.
    pub head_hidden: usize,
}

impl ModelConfig {
    pub fn new(format: ReprFormat, num_classes: usize) -> Self {
        Self {
            format,
            num_classes,
            n_mels: 64,
            conv_channels: vec![16, 32, 64],
            pool_factors: vec![(1, 2), (1, 2), (1, 2)],
            seq_hidden: 128,
            head_hidden: 128,
        }
    }

    /// Shrunk configuration for fast CPU experiments.
    pub fn desk_scale(format: ReprFormat, num_classes: usize, n_mels: usize) -> Self {
        Self {
            format,
            num_classes,
            n_mels,
            conv_channels: vec![8, 16],
            pool_factors: vec![(2, 2), (1, 2)],
            seq_hidden: 48,
            head_hidden: 48,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_classes == 0 {
            return Err(Error::validation("model needs at least one class"));
        }
        if self.conv_channels.is_empty() || self.conv_channels.len() != self.pool_factors.len() {
            return Err(Error::validation(
                "conv_channels and pool_factors must be nonempty and equally long".to_string(),
            ));
        }
        if self.seq_hidden == 0 || self.head_hidden == 0 {
            return Err(Error::validation("hidden widths must be positive"));
        }
        if self.mel_bins_after_pooling() == 0 {
            return Err(Error::validation(format!(
                "frequency pooling collapses {} mel bins to zero",
                self.n_mels
            )));
        }
        Ok(())
    }

    fn mel_bins_after_pooling(&self) -> usize {
        let mut f = self.n_mels;
        for (_, pf) in &self.pool_factors {
            f /= pf.max(&1);
        }
        f
    }

    /// Flattened feature dimension entering the recurrent layer.
    fn sequence_input_dim(&self) -> usize {
        self.conv_channels.last().copied().unwrap_or(0) * self.mel_bins_after_pooling()
    }
}

struct ConvStage<S: Scalar> {
    conv: Conv2d<S>,
    relu: Relu3<S>,
    pool: AvgPool2d<S>,
}

struct Head<S: Scalar> {
    fc1: Linear<S>,
    relu: Relu2<S>,
    fc2: Linear<S>,
    activation: BranchActivation<S>,
}

/// The trainable model. Forward passes cache activations for backward.
pub struct SeldModel<S: Scalar> {
    config: ModelConfig,
    stages: Vec<ConvStage<S>>,
    seq_pool: SegmentPoolFlatten<S>,
    gru: Gru<S>,
    heads: Vec<Head<S>>,
}

impl<S: Scalar> SeldModel<S> {
    /// Builds a model with seeded initialization: fan-in uniform weights and
    /// zeroed final head layers (so untrained SED scores sit at 0.5).
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);

        let mut stages = Vec::new();
        let mut c_in = FEATURE_CHANNELS;
        for (i, &c_out) in config.conv_channels.iter().enumerate() {
            let (pt, pf) = config.pool_factors[i];
            stages.push(ConvStage {
                conv: Conv2d::new(c_in, c_out, &mut rng),
                relu: Relu3::new(),
                pool: AvgPool2d::new(pt, pf),
            });
            c_in = c_out;
        }

        let gru = Gru::new(config.sequence_input_dim(), config.seq_hidden, &mut rng);

        let dims = config.format.branch_dims(config.num_classes);
        let activations = config.format.activations();
        let heads = dims
            .iter()
            .zip(activations)
            .map(|(&n_q, act)| Head {
                fc1: Linear::new(config.seq_hidden, config.head_hidden, &mut rng),
                relu: Relu2::new(),
                fc2: Linear::zeroed(config.head_hidden, n_q),
                activation: BranchActivation::new(act),
            })
            .collect();

        Ok(Self {
            config,
            stages,
            seq_pool: SegmentPoolFlatten::new(),
            gru,
            heads,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    /// Runs the network on one clip's features, producing branch outputs on
    /// the label grid (`label_frames` rows per branch).
    pub fn forward(
        &mut self,
        features: &SpectralFeatures<S>,
        label_frames: usize,
    ) -> Result<TargetTensor<S>> {
        let (t_f, ch, f_len) = features.data.dim();
        if ch != FEATURE_CHANNELS || f_len != self.config.n_mels {
            return Err(Error::shape(format!(
                "features are {t_f} x {ch} x {f_len}, model expects T x {FEATURE_CHANNELS} x {}",
                self.config.n_mels
            )));
        }

        // (T, CH, F) -> (CH, T, F) channel-major maps for the conv stack.
        let mut x = Array3::zeros((ch, t_f, f_len));
        for t in 0..t_f {
            for c in 0..ch {
                for f in 0..f_len {
                    x[(c, t, f)] = features.data[(t, c, f)];
                }
            }
        }

        for stage in &mut self.stages {
            x = stage.conv.forward(&x);
            x = stage.relu.forward(x);
            x = stage.pool.forward(&x);
        }

        let seq = self.seq_pool.forward(&x, label_frames)?;
        let hidden = self.gru.forward(&seq);

        let mut branches = Vec::with_capacity(self.heads.len());
        for head in &mut self.heads {
            let a = head.fc1.forward(&hidden);
            let a = head.relu.forward(a);
            let a = head.fc2.forward(&a);
            branches.push(head.activation.forward(a));
        }
        TargetTensor::new(self.config.format, self.config.num_classes, branches)
    }

    /// Backpropagates per-branch output gradients, accumulating parameter
    /// gradients. Requires a cached forward pass.
    pub fn backward(&mut self, branch_grads: &[Array2<S>]) -> Result<()> {
        if branch_grads.len() != self.heads.len() {
            return Err(Error::shape(format!(
                "got {} branch gradients for {} heads",
                branch_grads.len(),
                self.heads.len()
            )));
        }

        let mut hidden_grad: Option<Array2<S>> = None;
        for (head, gy) in self.heads.iter_mut().zip(branch_grads) {
            let g = head.activation.backward(gy)?;
            let g = head.fc2.backward(&g)?;
            let g = head.relu.backward(g)?;
            let g = head.fc1.backward(&g)?;
            hidden_grad = Some(match hidden_grad {
                None => g,
                Some(acc) => acc + g,
            });
        }
        let hidden_grad = hidden_grad.expect("at least one head");

        let seq_grad = self.gru.backward(&hidden_grad)?;
        let mut map_grad = self.seq_pool.backward(&seq_grad)?;
        for stage in self.stages.iter_mut().rev() {
            let g = stage.pool.backward(&map_grad)?;
            let g = stage.relu.backward(g)?;
            map_grad = stage.conv.backward(&g)?;
        }
        Ok(())
    }

    /// Visits every (values, grads) parameter pair in a fixed order.
    pub fn for_each_param(&mut self, f: layers::ParamFn<S>) {
        for stage in &mut self.stages {
            stage.conv.for_each_param(f);
        }
        self.gru.for_each_param(f);
        for head in &mut self.heads {
            head.fc1.for_each_param(f);
            head.fc2.for_each_param(f);
        }
    }

    pub fn zero_grads(&mut self) {
        self.for_each_param(&mut |_v, g| g.fill(S::zero()));
    }

    pub fn param_count(&mut self) -> usize {
        let mut n = 0;
        self.for_each_param(&mut |v, _| n += v.len());
        n
    }
}

/// Everything needed to run inference later: model weights plus the feature
/// and label-grid configuration they were trained with.
pub struct Checkpoint<S: Scalar> {
    pub model: SeldModel<S>,
    pub stft: StftConfig,
    pub label_hop: f64,
}

const CKPT_MAGIC: &[u8; 8] = b"SELDCKPT";
const CKPT_VERSION: u16 = 1;

impl<S: Scalar> Checkpoint<S> {
    pub fn save(&mut self, path: &Path) -> Result<()> {
        let mut buf: Vec<u8> = Vec::new();
        buf.extend_from_slice(CKPT_MAGIC);
        buf.extend_from_slice(&CKPT_VERSION.to_le_bytes());
        buf.push(std::mem::size_of::<S>() as u8);
        let cfg = &self.model.config;
        buf.push(cfg.format.code());
        buf.extend_from_slice(&(cfg.num_classes as u32).to_le_bytes());
        buf.extend_from_slice(&(cfg.n_mels as u32).to_le_bytes());
        buf.push(cfg.conv_channels.len() as u8);
        for (i, &ch) in cfg.conv_channels.iter().enumerate() {
            buf.extend_from_slice(&(ch as u32).to_le_bytes());
            buf.extend_from_slice(&(cfg.pool_factors[i].0 as u16).to_le_bytes());
            buf.extend_from_slice(&(cfg.pool_factors[i].1 as u16).to_le_bytes());
        }
        buf.extend_from_slice(&(cfg.seq_hidden as u32).to_le_bytes());
        buf.extend_from_slice(&(cfg.head_hidden as u32).to_le_bytes());
        buf.extend_from_slice(&self.stft.frame_len.to_le_bytes());
        buf.extend_from_slice(&self.stft.hop.to_le_bytes());
        buf.push(match self.stft.window {
            WindowKind::Hann => 0,
            WindowKind::Hamming => 1,
        });
        buf.extend_from_slice(&self.label_hop.to_le_bytes());

        let mut blob: Vec<u8> = Vec::new();
        self.model.for_each_param(&mut |v, _| {
            blob.extend_from_slice(&(v.len() as u64).to_le_bytes());
            for x in v.iter() {
                blob.extend_from_slice(&x.as_f64().to_le_bytes());
            }
        });
        buf.extend_from_slice(&blob);
        crate::io::write_atomic(path, &buf)
    }

    pub fn load(path: &Path) -> Result<Checkpoint<S>> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let mut r = crate::io::ByteReader::new(&bytes, path);

        if r.take(8)? != CKPT_MAGIC {
            return Err(Error::AudioFormat(format!(
                "{}: not a checkpoint file",
                path.display()
            )));
        }
        let version = r.u16()?;
        if version != CKPT_VERSION {
            return Err(Error::AudioFormat(format!(
                "{}: unsupported checkpoint version {version}",
                path.display()
            )));
        }
        let _dtype = r.u8()?;
        let format = ReprFormat::from_code(r.u8()?)?;
        let num_classes = r.u32()? as usize;
        let n_mels = r.u32()? as usize;
        let n_stages = r.u8()? as usize;
        let mut conv_channels = Vec::with_capacity(n_stages);
        let mut pool_factors = Vec::with_capacity(n_stages);
        for _ in 0..n_stages {
            conv_channels.push(r.u32()? as usize);
            let pt = r.u16()? as usize;
            let pf = r.u16()? as usize;
            pool_factors.push((pt, pf));
        }
        let seq_hidden = r.u32()? as usize;
        let head_hidden = r.u32()? as usize;
        let frame_len = r.f64()?;
        let hop = r.f64()?;
        let window = match r.u8()? {
            0 => WindowKind::Hann,
            1 => WindowKind::Hamming,
            other => {
                return Err(Error::AudioFormat(format!(
                    "{}: unknown window code {other}",
                    path.display()
                )))
            }
        };
        let label_hop = r.f64()?;

        let config = ModelConfig {
            format,
            num_classes,
            n_mels,
            conv_channels,
            pool_factors,
            seq_hidden,
            head_hidden,
        };
        let mut model = SeldModel::new(config, 0)?;

        // Parse the remaining blob into length-prefixed tensors, then fill
        // the freshly built model in visit order.
        let mut tensors: Vec<Vec<S>> = Vec::new();
        while r.remaining() > 0 {
            let len = r.u64()? as usize;
            let raw = r.take(8 * len)?;
            tensors.push(
                raw.chunks_exact(8)
                    .map(|chunk| S::cast(f64::from_le_bytes(chunk.try_into().unwrap())))
                    .collect(),
            );
        }
        let expected: usize = {
            let mut n = 0;
            model.for_each_param(&mut |_v, _| n += 1);
            n
        };
        if tensors.len() != expected {
            return Err(Error::AudioFormat(format!(
                "{}: {} parameter tensors where {expected} expected",
                path.display(),
                tensors.len()
            )));
        }
        let mut mismatch = None;
        let mut iter = tensors.into_iter();
        model.for_each_param(&mut |v, _| {
            let tensor = iter.next().expect("tensor count checked above");
            if tensor.len() == v.len() {
                v.copy_from_slice(&tensor);
            } else {
                mismatch = Some((tensor.len(), v.len()));
            }
        });
        if let Some((got, want)) = mismatch {
            return Err(Error::AudioFormat(format!(
                "{}: parameter tensor of {got} values where {want} expected",
                path.display()
            )));
        }

        Ok(Checkpoint {
            model,
            stft: StftConfig {
                frame_len,
                hop,
                window,
                n_mels,
            },
            label_hop,
        })
    }
}

/// Extracts features and runs the model, returning raw branch outputs on the
/// clip's label grid.
pub fn predict_tensor<S: Scalar>(
    ckpt: &mut Checkpoint<S>,
    audio: &AudioClip<S>,
) -> Result<TargetTensor<S>> {
    let features = crate::features::extract(audio, &ckpt.stft)?;
    let grid = FrameGrid::new(ckpt.label_hop, audio.duration())?;
    ckpt.model.forward(&features, grid.num_frames())
}

/// Predicts and decodes a single model's output into events.
pub fn predict_clip<S: Scalar>(
    ckpt: &mut Checkpoint<S>,
    audio: &AudioClip<S>,
    decode_cfg: &DecodeConfig,
    classes: &ClassMap,
) -> Result<Clip<S>> {
    let tensor = predict_tensor(ckpt, audio)?;
    let grid = FrameGrid::new(ckpt.label_hop, audio.duration())?;
    crate::repr::decode(&tensor, decode_cfg, grid, classes)
}

/// Joint prediction from a SED-DOA and a SED-SDE checkpoint.
pub fn predict_joint<S: Scalar>(
    doa_ckpt: &mut Checkpoint<S>,
    sde_ckpt: &mut Checkpoint<S>,
    audio: &AudioClip<S>,
    decode_cfg: &DecodeConfig,
    classes: &ClassMap,
) -> Result<Clip<S>> {
    let doa_pred = predict_tensor(doa_ckpt, audio)?;
    let sde_pred = predict_tensor(sde_ckpt, audio)?;
    let grid = FrameGrid::new(doa_ckpt.label_hop, audio.duration())?;
    crate::repr::combine_joint(&doa_pred, &sde_pred, decode_cfg, grid, classes)
}
