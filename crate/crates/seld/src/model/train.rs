//! Training loop: adaptive-moment optimizer, three-stage learning-rate
//! schedule, deterministic batching, per-step loss logging.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::features::SpectralFeatures;
use crate::losses::{joint_loss, joint_loss_grad, LossWeights, SdeLossKind};
use crate::repr::TargetTensor;
use crate::scalar::Scalar;

use super::SeldModel;

/// Objective selection: weights plus the distance-branch loss family.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossConfig<S: Scalar> {
    pub weights: LossWeights<S>,
    pub sde_kind: SdeLossKind,
}

/// Trainer hyperparameters. Desk-scale defaults; the full-scale recipe
/// (batch 32, 360k steps, peak 1e-3) is reachable through the same fields.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig<S: Scalar> {
    pub batch_size: usize,
    pub total_steps: usize,
    pub peak_lr: f64,
    /// Fraction of steps ramping linearly from 0 to `peak_lr`.
    pub warmup_frac: f64,
    /// Fraction of steps held at `peak_lr` after warmup.
    pub hold_frac: f64,
    /// Final learning rate as a fraction of the peak.
    pub decay_floor: f64,
    pub seed: u64,
    pub loss: LossConfig<S>,
}

impl<S: Scalar> Default for TrainConfig<S> {
    fn default() -> Self {
        Self {
            batch_size: 8,
            total_steps: 2000,
            peak_lr: 0.001,
            warmup_frac: 0.1,
            hold_frac: 0.4,
            decay_floor: 0.05,
            seed: 0,
            loss: LossConfig::default(),
        }
    }
}

impl<S: Scalar> TrainConfig<S> {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.total_steps == 0 {
            return Err(Error::validation("batch size and step count must be positive"));
        }
        if !(self.peak_lr > 0.0) {
            return Err(Error::validation("peak learning rate must be positive"));
        }
        if !(0.0..=1.0).contains(&self.warmup_frac)
            || !(0.0..=1.0).contains(&self.hold_frac)
            || self.warmup_frac + self.hold_frac > 1.0
        {
            return Err(Error::validation(
                "schedule fractions must lie in [0, 1] with warmup + hold <= 1".to_string(),
            ));
        }
        if !(0.0..=1.0).contains(&self.decay_floor) || self.decay_floor <= 0.0 {
            return Err(Error::validation("decay floor must lie in (0, 1]"));
        }
        Ok(())
    }
}

/// Three-stage schedule: linear warmup to the peak, a hold phase, then
/// exponential decay reaching `decay_floor * peak` exactly at the last step.
pub fn learning_rate<S: Scalar>(cfg: &TrainConfig<S>, step: usize) -> f64 {
    let total = cfg.total_steps;
    let warmup_end = (cfg.warmup_frac * total as f64).round() as usize;
    let hold_end = ((cfg.warmup_frac + cfg.hold_frac) * total as f64).round() as usize;
    if step < warmup_end {
        return cfg.peak_lr * step as f64 / warmup_end as f64;
    }
    if step < hold_end || total <= 1 {
        return cfg.peak_lr;
    }
    let last = total - 1;
    if step >= last {
        return cfg.peak_lr * cfg.decay_floor;
    }
    let span = (last - hold_end).max(1) as f64;
    let progress = (step - hold_end) as f64 / span;
    cfg.peak_lr * cfg.decay_floor.powf(progress)
}

/// One (features, encoded target) training example.
pub struct TrainItem<S: Scalar> {
    pub features: SpectralFeatures<S>,
    pub target: TargetTensor<S>,
}

/// Loss record for one optimizer step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub lr: f64,
    pub total: f64,
    pub components: Vec<(&'static str, f64)>,
}

impl StepRecord {
    /// Line-oriented log form: `step=3 lr=0.0005 total=1.2 sed=0.9 doa=0.3`.
    pub fn to_log_line(&self) -> String {
        let mut line = format!("step={} lr={:.6e} total={:.6e}", self.step, self.lr, self.total);
        for (name, value) in &self.components {
            line.push_str(&format!(" {name}={value:.6e}"));
        }
        line
    }
}

/// Adam optimizer over the model's visit-ordered parameter tensors.
pub struct Adam<S: Scalar> {
    beta1: S,
    beta2: S,
    eps: S,
    step_count: usize,
    first_moment: Vec<Vec<S>>,
    second_moment: Vec<Vec<S>>,
}

impl<S: Scalar> Adam<S> {
    pub fn new() -> Self {
        Self {
            beta1: S::cast(0.9),
            beta2: S::cast(0.999),
            eps: S::cast(1e-8),
            step_count: 0,
            first_moment: Vec::new(),
            second_moment: Vec::new(),
        }
    }

    /// Applies one update using the gradients accumulated in the model,
    /// scaled down by `grad_scale` (the batch size).
    pub fn step(&mut self, model: &mut SeldModel<S>, lr: f64, grad_scale: f64) {
        self.step_count += 1;
        if self.first_moment.is_empty() {
            model.for_each_param(&mut |v, _| {
                self.first_moment.push(vec![S::zero(); v.len()]);
                self.second_moment.push(vec![S::zero(); v.len()]);
            });
        }
        let lr = S::cast(lr);
        let scale = S::one() / S::cast(grad_scale.max(1.0));
        let b1 = self.beta1;
        let b2 = self.beta2;
        let eps = self.eps;
        let bias1 = S::one() - b1.powi(self.step_count as i32);
        let bias2 = S::one() - b2.powi(self.step_count as i32);
        let mut idx = 0;
        let m = &mut self.first_moment;
        let v2 = &mut self.second_moment;
        model.for_each_param(&mut |values, grads| {
            let m_t = &mut m[idx];
            let v_t = &mut v2[idx];
            for i in 0..values.len() {
                let g = grads[i] * scale;
                m_t[i] = b1 * m_t[i] + (S::one() - b1) * g;
                v_t[i] = b2 * v_t[i] + (S::one() - b2) * g * g;
                let m_hat = m_t[i] / bias1;
                let v_hat = v_t[i] / bias2;
                values[i] = values[i] - lr * m_hat / (v_hat.sqrt() + eps);
            }
            idx += 1;
        });
    }
}

impl<S: Scalar> Default for Adam<S> {
    fn default() -> Self {
        Self::new()
    }
}

/// Trains the model in place; returns the per-step loss history.
///
/// Deterministic given the config seed: batches are drawn from a seeded
/// stream and every reduction is single-threaded.
pub fn train<S: Scalar>(
    model: &mut SeldModel<S>,
    dataset: &[TrainItem<S>],
    cfg: &TrainConfig<S>,
) -> Result<Vec<StepRecord>> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(Error::validation("training dataset is empty"));
    }
    for (i, item) in dataset.iter().enumerate() {
        if item.target.format() != model.config().format {
            return Err(Error::shape(format!(
                "dataset item {i} encodes {}, model trains {}",
                item.target.format().name(),
                model.config().format.name()
            )));
        }
    }
    cfg.loss.weights.validate(model.config().format)?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut optimizer = Adam::new();
    let mut history = Vec::with_capacity(cfg.total_steps);

    for step in 0..cfg.total_steps {
        model.zero_grads();
        let mut total = 0.0;
        let mut components: Vec<(&'static str, f64)> = Vec::new();
        for _ in 0..cfg.batch_size {
            let item = &dataset[rng.gen_range(0..dataset.len())];
            let pred = model.forward(&item.features, item.target.num_frames())?;
            let loss = joint_loss(&pred, &item.target, &cfg.loss.weights, cfg.loss.sde_kind)?;
            total += loss.total.as_f64();
            if components.is_empty() {
                components = loss
                    .components
                    .iter()
                    .map(|c| (c.name, c.value.as_f64()))
                    .collect();
            } else {
                for (slot, c) in components.iter_mut().zip(&loss.components) {
                    slot.1 += c.value.as_f64();
                }
            }
            let grads = joint_loss_grad(&pred, &item.target, &cfg.loss.weights, cfg.loss.sde_kind)?;
            model.backward(&grads)?;
        }
        total /= cfg.batch_size as f64;
        for slot in components.iter_mut() {
            slot.1 /= cfg.batch_size as f64;
        }
        if !total.is_finite() {
            return Err(Error::NonFiniteLoss { step });
        }

        let lr = learning_rate(cfg, step);
        optimizer.step(model, lr, cfg.batch_size as f64);
        history.push(StepRecord {
            step,
            lr,
            total,
            components,
        });
    }
    Ok(history)
}
