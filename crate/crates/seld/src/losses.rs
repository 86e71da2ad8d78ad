//! Training objectives with activity masking, plus analytic gradients with
//! respect to the predictions.
//!
//! Every loss normalizes by the full `C * T` cell count; masked losses read
//! the ground-truth activity `a` so inactive cells contribute nothing.

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::repr::{ReprFormat, TargetTensor};
use crate::scalar::Scalar;

/// Clamp applied to SED scores before the logs in the BCE loss.
pub const BCE_EPS: f64 = 1e-7;
/// Denominator guard in the percent-error losses (labels are validated
/// positive beforehand; this only protects against corrupt data).
pub const SDE_DENOM_GUARD: f64 = 1e-6;

/// Distance-branch loss family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SdeLossKind {
    Mse,
    #[default]
    Mspe,
    Mape,
}

impl SdeLossKind {
    pub fn name(&self) -> &'static str {
        match self {
            SdeLossKind::Mse => "mse",
            SdeLossKind::Mspe => "mspe",
            SdeLossKind::Mape => "mape",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "mse" => Ok(SdeLossKind::Mse),
            "mspe" => Ok(SdeLossKind::Mspe),
            "mape" => Ok(SdeLossKind::Mape),
            other => Err(Error::validation(format!(
                "unknown SDE loss `{other}` (expected mse, mspe or mape)"
            ))),
        }
    }
}

/// Per-format loss weights.
///
/// The defaults follow the best-performing configurations per format:
/// `beta = (0.1, 1)` for SED-DOA, `gamma = (0.1, 2)` with MSPE for SED-SDE,
/// `eta = (1, 1)` with MSE for SED-SCE and `lambda = (0.1, 1, 2)` with MSPE
/// for SED-DOA-SDE.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights<S: Scalar> {
    pub beta: (S, S),
    pub gamma: (S, S),
    pub eta: (S, S),
    pub lambda: (S, S, S),
}

impl<S: Scalar> Default for LossWeights<S> {
    fn default() -> Self {
        Self {
            beta: (S::cast(0.1), S::one()),
            gamma: (S::cast(0.1), S::cast(2.0)),
            eta: (S::one(), S::one()),
            lambda: (S::cast(0.1), S::one(), S::cast(2.0)),
        }
    }
}

impl<S: Scalar> LossWeights<S> {
    pub fn validate(&self, format: ReprFormat) -> Result<()> {
        let ws: &[S] = match format {
            ReprFormat::SedDoa => &[self.beta.0, self.beta.1],
            ReprFormat::SedSde => &[self.gamma.0, self.gamma.1],
            ReprFormat::SedSce => &[self.eta.0, self.eta.1],
            ReprFormat::SedDoaSde => &[self.lambda.0, self.lambda.1, self.lambda.2],
            ReprFormat::MultiAccdoa => return Ok(()),
        };
        if ws.iter().any(|w| *w < S::zero() || !w.is_finite()) {
            return Err(Error::validation(format!(
                "loss weights for {} must be finite and nonnegative",
                format.name()
            )));
        }
        if ws.iter().all(|w| *w == S::zero()) {
            return Err(Error::validation(format!(
                "at least one loss weight for {} must be positive",
                format.name()
            )));
        }
        Ok(())
    }
}

/// One weighted sub-loss of a composite objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossComponent<S: Scalar> {
    pub name: &'static str,
    pub value: S,
    pub weight: S,
}

/// Composite loss: `total = sum(weight_i * value_i)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LossValue<S: Scalar> {
    pub total: S,
    pub components: Vec<LossComponent<S>>,
}

impl<S: Scalar> LossValue<S> {
    fn from_components(components: Vec<LossComponent<S>>) -> Self {
        let total = components
            .iter()
            .map(|c| c.weight * c.value)
            .fold(S::zero(), |acc, x| acc + x);
        Self { total, components }
    }
}

fn check_same_shape<S: Scalar>(what: &str, a: &Array2<S>, b: &Array2<S>) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::shape(format!(
            "{what}: {:?} vs {:?}",
            a.dim(),
            b.dim()
        )));
    }
    Ok(())
}

fn check_mask_shape<S: Scalar>(what: &str, vec3: &Array2<S>, mask: &Array2<S>) -> Result<()> {
    if vec3.nrows() != mask.nrows() || vec3.ncols() != 3 * mask.ncols() {
        return Err(Error::shape(format!(
            "{what}: vectors {:?} vs activity {:?}",
            vec3.dim(),
            mask.dim()
        )));
    }
    Ok(())
}

/// Binary cross entropy over SED scores, mean over all `C * T` cells.
pub fn bce_sed<S: Scalar>(pred: &Array2<S>, gt: &Array2<S>) -> Result<S> {
    check_same_shape("bce_sed", pred, gt)?;
    let eps = S::cast(BCE_EPS);
    let hi = S::one() - eps;
    let mut acc = S::zero();
    for (p, a) in pred.iter().zip(gt.iter()) {
        let p = (*p).max(eps).min(hi);
        acc += *a * p.ln() + (S::one() - *a) * (S::one() - p).ln();
    }
    Ok(-acc / S::cast(pred.len() as f64))
}

/// Gradient of [`bce_sed`] with respect to the predictions.
pub fn bce_sed_grad<S: Scalar>(pred: &Array2<S>, gt: &Array2<S>) -> Result<Array2<S>> {
    check_same_shape("bce_sed", pred, gt)?;
    let eps = S::cast(BCE_EPS);
    let hi = S::one() - eps;
    let scale = S::one() / S::cast(pred.len() as f64);
    let mut grad = Array2::zeros(pred.dim());
    for (out, (p, a)) in grad.iter_mut().zip(pred.iter().zip(gt.iter())) {
        if *p <= eps || *p >= hi {
            continue; // clamp saturated; no gradient flows
        }
        *out = (-*a / *p + (S::one() - *a) / (S::one() - *p)) * scale;
    }
    Ok(grad)
}

/// Activity-masked squared error over DOA vectors, Eq-style `1/(CT)` mean.
pub fn mse_doa<S: Scalar>(pred: &Array2<S>, gt: &Array2<S>, gt_a: &Array2<S>) -> Result<S> {
    check_same_shape("mse_doa", pred, gt)?;
    check_mask_shape("mse_doa", pred, gt_a)?;
    Ok(masked_vec3_sq_sum(pred, gt, gt_a) / cells(gt_a))
}

/// Gradient of [`mse_doa`] with respect to the predictions.
pub fn mse_doa_grad<S: Scalar>(
    pred: &Array2<S>,
    gt: &Array2<S>,
    gt_a: &Array2<S>,
) -> Result<Array2<S>> {
    check_same_shape("mse_doa", pred, gt)?;
    check_mask_shape("mse_doa", pred, gt_a)?;
    Ok(masked_vec3_sq_grad(pred, gt, gt_a))
}

/// Activity-masked squared error over Cartesian source coordinates.
pub fn sce_loss<S: Scalar>(pred: &Array2<S>, gt: &Array2<S>, gt_a: &Array2<S>) -> Result<S> {
    check_same_shape("sce_loss", pred, gt)?;
    check_mask_shape("sce_loss", pred, gt_a)?;
    Ok(masked_vec3_sq_sum(pred, gt, gt_a) / cells(gt_a))
}

/// Gradient of [`sce_loss`] with respect to the predictions.
pub fn sce_loss_grad<S: Scalar>(
    pred: &Array2<S>,
    gt: &Array2<S>,
    gt_a: &Array2<S>,
) -> Result<Array2<S>> {
    check_same_shape("sce_loss", pred, gt)?;
    check_mask_shape("sce_loss", pred, gt_a)?;
    Ok(masked_vec3_sq_grad(pred, gt, gt_a))
}

fn cells<S: Scalar>(mask: &Array2<S>) -> S {
    S::cast((mask.nrows() * mask.ncols()) as f64)
}

fn masked_vec3_sq_sum<S: Scalar>(pred: &Array2<S>, gt: &Array2<S>, gt_a: &Array2<S>) -> S {
    let mut acc = S::zero();
    for t in 0..gt_a.nrows() {
        for c in 0..gt_a.ncols() {
            let a = gt_a[(t, c)];
            if a == S::zero() {
                continue;
            }
            for k in 0..3 {
                let d = pred[(t, 3 * c + k)] - gt[(t, 3 * c + k)];
                acc += a * d * d;
            }
        }
    }
    acc
}

fn masked_vec3_sq_grad<S: Scalar>(
    pred: &Array2<S>,
    gt: &Array2<S>,
    gt_a: &Array2<S>,
) -> Array2<S> {
    let scale = S::cast(2.0) / cells(gt_a);
    let mut grad = Array2::zeros(pred.dim());
    for t in 0..gt_a.nrows() {
        for c in 0..gt_a.ncols() {
            let a = gt_a[(t, c)];
            if a == S::zero() {
                continue;
            }
            for k in 0..3 {
                grad[(t, 3 * c + k)] = scale * a * (pred[(t, 3 * c + k)] - gt[(t, 3 * c + k)]);
            }
        }
    }
    grad
}

/// Distance-branch loss (MSE, MSPE or MAPE), masked by activity.
pub fn sde_loss<S: Scalar>(
    kind: SdeLossKind,
    pred: &Array2<S>,
    gt: &Array2<S>,
    gt_a: &Array2<S>,
) -> Result<S> {
    check_same_shape("sde_loss", pred, gt)?;
    check_same_shape("sde_loss activity", gt, gt_a)?;
    let guard = S::cast(SDE_DENOM_GUARD);
    let mut acc = S::zero();
    for t in 0..gt.nrows() {
        for c in 0..gt.ncols() {
            let a = gt_a[(t, c)];
            if a == S::zero() {
                continue;
            }
            let d = gt[(t, c)];
            if d <= S::zero() {
                return Err(Error::validation(format!(
                    "active cell (class {c}, frame {t}) has non-positive distance {d}"
                )));
            }
            let diff = d - pred[(t, c)];
            acc += match kind {
                SdeLossKind::Mse => a * diff * diff,
                SdeLossKind::Mspe => {
                    let r = diff / d.max(guard);
                    a * r * r
                }
                SdeLossKind::Mape => a * (diff / d.max(guard)).abs(),
            };
        }
    }
    Ok(acc / cells(gt_a))
}

/// Gradient of [`sde_loss`] with respect to the predicted distances.
pub fn sde_loss_grad<S: Scalar>(
    kind: SdeLossKind,
    pred: &Array2<S>,
    gt: &Array2<S>,
    gt_a: &Array2<S>,
) -> Result<Array2<S>> {
    check_same_shape("sde_loss", pred, gt)?;
    check_same_shape("sde_loss activity", gt, gt_a)?;
    let guard = S::cast(SDE_DENOM_GUARD);
    let scale = S::one() / cells(gt_a);
    let two = S::cast(2.0);
    let mut grad = Array2::zeros(pred.dim());
    for t in 0..gt.nrows() {
        for c in 0..gt.ncols() {
            let a = gt_a[(t, c)];
            if a == S::zero() {
                continue;
            }
            let d = gt[(t, c)];
            if d <= S::zero() {
                return Err(Error::validation(format!(
                    "active cell (class {c}, frame {t}) has non-positive distance {d}"
                )));
            }
            let diff = pred[(t, c)] - d;
            grad[(t, c)] = match kind {
                SdeLossKind::Mse => two * a * diff * scale,
                SdeLossKind::Mspe => {
                    let dg = d.max(guard);
                    two * a * diff / (dg * dg) * scale
                }
                SdeLossKind::Mape => a * sign(diff) / d.max(guard) * scale,
            };
        }
    }
    Ok(grad)
}

fn sign<S: Scalar>(x: S) -> S {
    if x > S::zero() {
        S::one()
    } else if x < S::zero() {
        -S::one()
    } else {
        S::zero()
    }
}

/// Plain mean squared error over a full branch (multi-ACCDOA training).
pub fn accdoa_mse<S: Scalar>(pred: &Array2<S>, gt: &Array2<S>) -> Result<S> {
    check_same_shape("accdoa_mse", pred, gt)?;
    let mut acc = S::zero();
    for (p, g) in pred.iter().zip(gt.iter()) {
        let d = *p - *g;
        acc += d * d;
    }
    Ok(acc / S::cast(pred.len() as f64))
}

/// Gradient of [`accdoa_mse`] with respect to the predictions.
pub fn accdoa_mse_grad<S: Scalar>(pred: &Array2<S>, gt: &Array2<S>) -> Result<Array2<S>> {
    check_same_shape("accdoa_mse", pred, gt)?;
    let scale = S::cast(2.0) / S::cast(pred.len() as f64);
    let mut grad = Array2::zeros(pred.dim());
    for (out, (p, g)) in grad.iter_mut().zip(pred.iter().zip(gt.iter())) {
        *out = scale * (*p - *g);
    }
    Ok(grad)
}

/// Composite objective for a format: the weighted sum its branches train with.
pub fn joint_loss<S: Scalar>(
    pred: &TargetTensor<S>,
    gt: &TargetTensor<S>,
    weights: &LossWeights<S>,
    sde_kind: SdeLossKind,
) -> Result<LossValue<S>> {
    check_pair(pred, gt)?;
    weights.validate(pred.format())?;
    let components = match pred.format() {
        ReprFormat::MultiAccdoa => vec![LossComponent {
            name: "accdoa_mse",
            value: accdoa_mse(pred.branch(0), gt.branch(0))?,
            weight: S::one(),
        }],
        ReprFormat::SedDoa => vec![
            LossComponent {
                name: "sed",
                value: bce_sed(pred.branch(0), gt.branch(0))?,
                weight: weights.beta.0,
            },
            LossComponent {
                name: "doa",
                value: mse_doa(pred.branch(1), gt.branch(1), gt.branch(0))?,
                weight: weights.beta.1,
            },
        ],
        ReprFormat::SedSde => vec![
            LossComponent {
                name: "sed",
                value: bce_sed(pred.branch(0), gt.branch(0))?,
                weight: weights.gamma.0,
            },
            LossComponent {
                name: "sde",
                value: sde_loss(sde_kind, pred.branch(1), gt.branch(1), gt.branch(0))?,
                weight: weights.gamma.1,
            },
        ],
        ReprFormat::SedSce => vec![
            LossComponent {
                name: "sed",
                value: bce_sed(pred.branch(0), gt.branch(0))?,
                weight: weights.eta.0,
            },
            LossComponent {
                name: "sce",
                value: sce_loss(pred.branch(1), gt.branch(1), gt.branch(0))?,
                weight: weights.eta.1,
            },
        ],
        ReprFormat::SedDoaSde => vec![
            LossComponent {
                name: "sed",
                value: bce_sed(pred.branch(0), gt.branch(0))?,
                weight: weights.lambda.0,
            },
            LossComponent {
                name: "doa",
                value: mse_doa(pred.branch(1), gt.branch(1), gt.branch(0))?,
                weight: weights.lambda.1,
            },
            LossComponent {
                name: "sde",
                value: sde_loss(sde_kind, pred.branch(2), gt.branch(2), gt.branch(0))?,
                weight: weights.lambda.2,
            },
        ],
    };
    Ok(LossValue::from_components(components))
}

/// Gradient of [`joint_loss`] with respect to every prediction branch.
pub fn joint_loss_grad<S: Scalar>(
    pred: &TargetTensor<S>,
    gt: &TargetTensor<S>,
    weights: &LossWeights<S>,
    sde_kind: SdeLossKind,
) -> Result<Vec<Array2<S>>> {
    check_pair(pred, gt)?;
    weights.validate(pred.format())?;
    let scaled = |mut g: Array2<S>, w: S| {
        g.mapv_inplace(|x| x * w);
        g
    };
    Ok(match pred.format() {
        ReprFormat::MultiAccdoa => vec![accdoa_mse_grad(pred.branch(0), gt.branch(0))?],
        ReprFormat::SedDoa => vec![
            scaled(bce_sed_grad(pred.branch(0), gt.branch(0))?, weights.beta.0),
            scaled(
                mse_doa_grad(pred.branch(1), gt.branch(1), gt.branch(0))?,
                weights.beta.1,
            ),
        ],
        ReprFormat::SedSde => vec![
            scaled(bce_sed_grad(pred.branch(0), gt.branch(0))?, weights.gamma.0),
            scaled(
                sde_loss_grad(sde_kind, pred.branch(1), gt.branch(1), gt.branch(0))?,
                weights.gamma.1,
            ),
        ],
        ReprFormat::SedSce => vec![
            scaled(bce_sed_grad(pred.branch(0), gt.branch(0))?, weights.eta.0),
            scaled(
                sce_loss_grad(pred.branch(1), gt.branch(1), gt.branch(0))?,
                weights.eta.1,
            ),
        ],
        ReprFormat::SedDoaSde => vec![
            scaled(bce_sed_grad(pred.branch(0), gt.branch(0))?, weights.lambda.0),
            scaled(
                mse_doa_grad(pred.branch(1), gt.branch(1), gt.branch(0))?,
                weights.lambda.1,
            ),
            scaled(
                sde_loss_grad(sde_kind, pred.branch(2), gt.branch(2), gt.branch(0))?,
                weights.lambda.2,
            ),
        ],
    })
}

fn check_pair<S: Scalar>(pred: &TargetTensor<S>, gt: &TargetTensor<S>) -> Result<()> {
    if pred.format() != gt.format()
        || pred.num_classes() != gt.num_classes()
        || pred.num_frames() != gt.num_frames()
    {
        return Err(Error::shape(format!(
            "prediction {} ({} classes, {} frames) vs target {} ({} classes, {} frames)",
            pred.format().name(),
            pred.num_classes(),
            pred.num_frames(),
            gt.format().name(),
            gt.num_classes(),
            gt.num_frames()
        )));
    }
    Ok(())
}
