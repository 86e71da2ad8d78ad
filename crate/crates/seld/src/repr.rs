//! Output-representation codecs: encode ground truth into each of the five
//! branch formats and decode network outputs back into event annotations.
//!
//! Branch layouts, all `T x N_q` row-major:
//! - SED branches: column `c` is class `c`'s activity.
//! - DOA / SCE branches (`3C` wide): class-major triplets, columns
//!   `3c .. 3c+3` hold `(x, y, z)` for class `c`.
//! - SDE branches (`C` wide): column `c` is class `c`'s distance.
//! - Multi-ACCDOA (`3 * 4C` wide): three track blocks of `4C`; within a block,
//!   columns `4c .. 4c+4` hold `(x, y, z, d)` for class `c`.

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::types::{ClassMap, Clip, EventAnnotation, FrameGrid};

/// Number of parallel tracks in the multi-ACCDOA format.
pub const MULTI_ACCDOA_TRACKS: usize = 3;

/// Branch activation function, as reported per format.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Sigmoid,
    Tanh,
    ReLU,
    Linear,
}

/// The five output-representation formats.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ReprFormat {
    /// One linear branch of three 4C tracks (x, y, z, d per class).
    MultiAccdoa,
    /// SED scores plus a DOA vector branch.
    SedDoa,
    /// SED scores plus a distance branch.
    SedSde,
    /// SED scores plus source Cartesian coordinates `S = d * R`.
    SedSce,
    /// SED, DOA and distance branches.
    SedDoaSde,
}

impl ReprFormat {
    pub const ALL: [ReprFormat; 5] = [
        ReprFormat::MultiAccdoa,
        ReprFormat::SedDoa,
        ReprFormat::SedSde,
        ReprFormat::SedSce,
        ReprFormat::SedDoaSde,
    ];

    /// Number of output branches `Q`.
    pub fn branch_count(&self) -> usize {
        match self {
            ReprFormat::MultiAccdoa => 1,
            ReprFormat::SedDoa | ReprFormat::SedSde | ReprFormat::SedSce => 2,
            ReprFormat::SedDoaSde => 3,
        }
    }

    /// Per-branch output dimensions `N_q` for `C` classes.
    pub fn branch_dims(&self, num_classes: usize) -> Vec<usize> {
        let c = num_classes;
        match self {
            ReprFormat::MultiAccdoa => vec![MULTI_ACCDOA_TRACKS * 4 * c],
            ReprFormat::SedDoa => vec![c, 3 * c],
            ReprFormat::SedSde => vec![c, c],
            ReprFormat::SedSce => vec![c, 3 * c],
            ReprFormat::SedDoaSde => vec![c, 3 * c, c],
        }
    }

    /// Per-branch activation functions.
    pub fn activations(&self) -> Vec<Activation> {
        match self {
            ReprFormat::MultiAccdoa => vec![Activation::Linear],
            ReprFormat::SedDoa => vec![Activation::Sigmoid, Activation::Tanh],
            ReprFormat::SedSde => vec![Activation::Sigmoid, Activation::ReLU],
            ReprFormat::SedSce => vec![Activation::Sigmoid, Activation::Linear],
            ReprFormat::SedDoaSde => vec![Activation::Sigmoid, Activation::Tanh, Activation::ReLU],
        }
    }

    /// Highest same-class polyphony the format can represent.
    pub fn max_polyphony(&self) -> usize {
        match self {
            ReprFormat::MultiAccdoa => MULTI_ACCDOA_TRACKS,
            _ => 1,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ReprFormat::MultiAccdoa => "multi-accdoa",
            ReprFormat::SedDoa => "sed-doa",
            ReprFormat::SedSde => "sed-sde",
            ReprFormat::SedSce => "sed-sce",
            ReprFormat::SedDoaSde => "sed-doa-sde",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        Self::ALL
            .iter()
            .copied()
            .find(|f| f.name() == name)
            .ok_or_else(|| {
                Error::validation(format!(
                    "unknown format `{name}` (expected one of multi-accdoa, sed-doa, sed-sde, sed-sce, sed-doa-sde)"
                ))
            })
    }

    /// Stable wire code used by tensor and checkpoint files.
    pub fn code(&self) -> u8 {
        match self {
            ReprFormat::MultiAccdoa => 0,
            ReprFormat::SedDoa => 1,
            ReprFormat::SedSde => 2,
            ReprFormat::SedSce => 3,
            ReprFormat::SedDoaSde => 4,
        }
    }

    pub fn from_code(code: u8) -> Result<Self> {
        Self::ALL
            .iter()
            .copied()
            .find(|f| f.code() == code)
            .ok_or_else(|| Error::validation(format!("unknown format code {code}")))
    }
}

/// Encoded learning target or raw network output for one clip.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetTensor<S: Scalar> {
    format: ReprFormat,
    num_classes: usize,
    branches: Vec<Array2<S>>,
}

impl<S: Scalar> TargetTensor<S> {
    /// Wraps raw branch matrices, checking dimensions against the format.
    pub fn new(format: ReprFormat, num_classes: usize, branches: Vec<Array2<S>>) -> Result<Self> {
        let dims = format.branch_dims(num_classes);
        if branches.len() != dims.len() {
            return Err(Error::shape(format!(
                "{} expects {} branches, got {}",
                format.name(),
                dims.len(),
                branches.len()
            )));
        }
        let num_frames = branches.first().map_or(0, |b| b.nrows());
        for (q, (branch, dim)) in branches.iter().zip(&dims).enumerate() {
            if branch.ncols() != *dim || branch.nrows() != num_frames {
                return Err(Error::shape(format!(
                    "branch {q} of {} should be {num_frames} x {dim}, got {} x {}",
                    format.name(),
                    branch.nrows(),
                    branch.ncols()
                )));
            }
        }
        Ok(Self {
            format,
            num_classes,
            branches,
        })
    }

    pub fn zeros(format: ReprFormat, num_classes: usize, num_frames: usize) -> Self {
        let branches = format
            .branch_dims(num_classes)
            .into_iter()
            .map(|dim| Array2::zeros((num_frames, dim)))
            .collect();
        Self {
            format,
            num_classes,
            branches,
        }
    }

    pub fn format(&self) -> ReprFormat {
        self.format
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn num_frames(&self) -> usize {
        self.branches.first().map_or(0, |b| b.nrows())
    }

    pub fn branches(&self) -> &[Array2<S>] {
        &self.branches
    }

    pub fn branch(&self, q: usize) -> &Array2<S> {
        &self.branches[q]
    }

    pub fn branch_mut(&mut self, q: usize) -> &mut Array2<S> {
        &mut self.branches[q]
    }
}

/// Decode thresholds and guards.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecodeConfig {
    /// SED score above which an event is considered active.
    pub sed_threshold: f64,
    /// ACCDOA vector-norm threshold for activity.
    pub accdoa_threshold: f64,
    /// Lower clamp for decoded distances; also the degenerate-SCE cutoff.
    pub min_distance: f64,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        Self {
            sed_threshold: 0.5,
            accdoa_threshold: 0.5,
            min_distance: 0.01,
        }
    }
}

impl DecodeConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.sed_threshold) {
            return Err(Error::validation(format!(
                "SED threshold must lie in [0, 1], got {}",
                self.sed_threshold
            )));
        }
        if !(self.accdoa_threshold >= 0.0) {
            return Err(Error::validation("ACCDOA threshold must be nonnegative"));
        }
        if !(self.min_distance > 0.0) {
            return Err(Error::validation("min distance must be positive"));
        }
        Ok(())
    }
}

/// Encodes a ground-truth clip into the given format.
///
/// Active events contribute `(a, a*R, a*d, a*d*R)` pieces per the format; the
/// multi-ACCDOA format assigns same-cell events to tracks in order of
/// appearance. Exceeding the format's polyphony is an error naming the cell.
pub fn encode<S: Scalar>(clip: &Clip<S>, format: ReprFormat) -> Result<TargetTensor<S>> {
    let c = clip.num_classes();
    let t_len = clip.num_frames();
    let mut out = TargetTensor::zeros(format, c, t_len);
    let mut track_fill = std::collections::HashMap::<(usize, usize), usize>::new();

    for ann in clip.annotations() {
        let (t, cls) = (ann.frame, ann.class_id);
        let slot = track_fill.entry((t, cls)).or_insert(0);
        if *slot >= format.max_polyphony() {
            return Err(Error::validation(format!(
                "polyphony exceeds {} for format {} at class {cls}, frame {t}",
                format.max_polyphony(),
                format.name()
            )));
        }
        let track = *slot;
        *slot += 1;

        let a = ann.activity;
        match format {
            ReprFormat::MultiAccdoa => {
                let base = track * 4 * c + 4 * cls;
                for axis in 0..3 {
                    out.branches[0][(t, base + axis)] = a * ann.doa[axis];
                }
                out.branches[0][(t, base + 3)] = a * ann.distance;
            }
            ReprFormat::SedDoa => {
                out.branches[0][(t, cls)] = a;
                for axis in 0..3 {
                    out.branches[1][(t, 3 * cls + axis)] = a * ann.doa[axis];
                }
            }
            ReprFormat::SedSde => {
                out.branches[0][(t, cls)] = a;
                out.branches[1][(t, cls)] = a * ann.distance;
            }
            ReprFormat::SedSce => {
                out.branches[0][(t, cls)] = a;
                for axis in 0..3 {
                    out.branches[1][(t, 3 * cls + axis)] = a * ann.distance * ann.doa[axis];
                }
            }
            ReprFormat::SedDoaSde => {
                out.branches[0][(t, cls)] = a;
                for axis in 0..3 {
                    out.branches[1][(t, 3 * cls + axis)] = a * ann.doa[axis];
                }
                out.branches[2][(t, cls)] = a * ann.distance;
            }
        }
    }
    Ok(out)
}

/// Decodes network output back into a clip of active events.
///
/// Formats without a distance branch decode with a 1 m placeholder distance;
/// formats without a DOA branch decode toward +x. Evaluation of such partial
/// predictions disables the corresponding metric component.
pub fn decode<S: Scalar>(
    pred: &TargetTensor<S>,
    cfg: &DecodeConfig,
    grid: FrameGrid,
    classes: &ClassMap,
) -> Result<Clip<S>> {
    cfg.validate()?;
    if pred.num_classes() != classes.len() {
        return Err(Error::shape(format!(
            "tensor encodes {} classes, class map has {}",
            pred.num_classes(),
            classes.len()
        )));
    }
    if pred.num_frames() != grid.num_frames() {
        return Err(Error::shape(format!(
            "tensor has {} frames, grid has {}",
            pred.num_frames(),
            grid.num_frames()
        )));
    }

    let c = pred.num_classes();
    let t_len = pred.num_frames();
    let sed_thr = S::cast(cfg.sed_threshold);
    let min_d = S::cast(cfg.min_distance);
    let mut annotations = Vec::new();

    match pred.format() {
        ReprFormat::MultiAccdoa => {
            let b = pred.branch(0);
            for t in 0..t_len {
                for cls in 0..c {
                    for track in 0..MULTI_ACCDOA_TRACKS {
                        let base = track * 4 * c + 4 * cls;
                        let v = [b[(t, base)], b[(t, base + 1)], b[(t, base + 2)]];
                        let norm = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
                        if norm.as_f64() > cfg.accdoa_threshold {
                            let doa = [v[0] / norm, v[1] / norm, v[2] / norm];
                            let distance = b[(t, base + 3)].max(min_d);
                            annotations.push(EventAnnotation {
                                frame: t,
                                class_id: cls,
                                source: track,
                                activity: S::one(),
                                doa,
                                distance,
                            });
                        }
                    }
                }
            }
        }
        format => {
            let sed = pred.branch(0);
            for t in 0..t_len {
                for cls in 0..c {
                    let score = sed[(t, cls)];
                    if score <= sed_thr {
                        continue;
                    }
                    let ann = match format {
                        ReprFormat::SedDoa => EventAnnotation {
                            frame: t,
                            class_id: cls,
                            source: 0,
                            activity: score,
                            doa: unit_or_default(read_vec3(pred.branch(1), t, cls)),
                            distance: S::one(),
                        },
                        ReprFormat::SedSde => EventAnnotation {
                            frame: t,
                            class_id: cls,
                            source: 0,
                            activity: score,
                            doa: [S::one(), S::zero(), S::zero()],
                            distance: pred.branch(1)[(t, cls)].max(min_d),
                        },
                        ReprFormat::SedSce => {
                            let s_vec = read_vec3(pred.branch(1), t, cls);
                            let norm =
                                (s_vec[0] * s_vec[0] + s_vec[1] * s_vec[1] + s_vec[2] * s_vec[2])
                                    .sqrt();
                            if norm < min_d {
                                // Direction is undefined at the origin; treat as inactive.
                                continue;
                            }
                            EventAnnotation {
                                frame: t,
                                class_id: cls,
                                source: 0,
                                activity: score,
                                doa: [s_vec[0] / norm, s_vec[1] / norm, s_vec[2] / norm],
                                distance: norm,
                            }
                        }
                        ReprFormat::SedDoaSde => EventAnnotation {
                            frame: t,
                            class_id: cls,
                            source: 0,
                            activity: score,
                            doa: unit_or_default(read_vec3(pred.branch(1), t, cls)),
                            distance: pred.branch(2)[(t, cls)].max(min_d),
                        },
                        ReprFormat::MultiAccdoa => unreachable!(),
                    };
                    annotations.push(ann);
                }
            }
        }
    }

    Clip::new(annotations, grid, classes.clone())
}

fn read_vec3<S: Scalar>(branch: &Array2<S>, t: usize, cls: usize) -> [S; 3] {
    [
        branch[(t, 3 * cls)],
        branch[(t, 3 * cls + 1)],
        branch[(t, 3 * cls + 2)],
    ]
}

fn unit_or_default<S: Scalar>(v: [S; 3]) -> [S; 3] {
    let norm = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    if norm > S::zero() {
        [v[0] / norm, v[1] / norm, v[2] / norm]
    } else {
        [S::one(), S::zero(), S::zero()]
    }
}

/// Combines a SED-DOA and a SED-SDE prediction into one 3D SELD result.
///
/// Activity is the mean of the two SED scores; DOA comes from the first
/// model, distance from the second.
pub fn combine_joint<S: Scalar>(
    sed_doa_pred: &TargetTensor<S>,
    sed_sde_pred: &TargetTensor<S>,
    cfg: &DecodeConfig,
    grid: FrameGrid,
    classes: &ClassMap,
) -> Result<Clip<S>> {
    cfg.validate()?;
    if sed_doa_pred.format() != ReprFormat::SedDoa {
        return Err(Error::shape(format!(
            "first tensor must be sed-doa, got {}",
            sed_doa_pred.format().name()
        )));
    }
    if sed_sde_pred.format() != ReprFormat::SedSde {
        return Err(Error::shape(format!(
            "second tensor must be sed-sde, got {}",
            sed_sde_pred.format().name()
        )));
    }
    if sed_doa_pred.num_classes() != sed_sde_pred.num_classes()
        || sed_doa_pred.num_frames() != sed_sde_pred.num_frames()
    {
        return Err(Error::shape(format!(
            "joint tensors disagree: {} x {} classes vs {} x {} classes",
            sed_doa_pred.num_frames(),
            sed_doa_pred.num_classes(),
            sed_sde_pred.num_frames(),
            sed_sde_pred.num_classes()
        )));
    }
    if sed_doa_pred.num_classes() != classes.len() || sed_doa_pred.num_frames() != grid.num_frames()
    {
        return Err(Error::shape(
            "joint tensors do not match the grid/class map".to_string(),
        ));
    }

    let c = classes.len();
    let t_len = grid.num_frames();
    let sed_thr = S::cast(cfg.sed_threshold);
    let min_d = S::cast(cfg.min_distance);
    let half = S::cast(0.5);
    let mut annotations = Vec::new();

    for t in 0..t_len {
        for cls in 0..c {
            let score =
                (sed_doa_pred.branch(0)[(t, cls)] + sed_sde_pred.branch(0)[(t, cls)]) * half;
            if score <= sed_thr {
                continue;
            }
            annotations.push(EventAnnotation {
                frame: t,
                class_id: cls,
                source: 0,
                activity: score,
                doa: unit_or_default(read_vec3(sed_doa_pred.branch(1), t, cls)),
                distance: sed_sde_pred.branch(1)[(t, cls)].max(min_d),
            });
        }
    }
    Clip::new(annotations, grid, classes.clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::doa_from_angles;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn setup(frames: usize, classes: usize) -> (FrameGrid, ClassMap) {
        (
            FrameGrid::new(0.1, frames as f64 * 0.1).unwrap(),
            ClassMap::numbered(classes).unwrap(),
        )
    }

    fn gt(frame: usize, class_id: usize, doa: [f64; 3], d: f64) -> EventAnnotation<f64> {
        EventAnnotation::ground_truth(frame, class_id, 0, doa, d).unwrap()
    }

    #[test]
    fn table_parameters_per_format() {
        let c = 13;
        assert_eq!(ReprFormat::MultiAccdoa.branch_dims(c), vec![12 * c]);
        assert_eq!(ReprFormat::SedDoa.branch_dims(c), vec![c, 3 * c]);
        assert_eq!(ReprFormat::SedSde.branch_dims(c), vec![c, c]);
        assert_eq!(ReprFormat::SedSce.branch_dims(c), vec![c, 3 * c]);
        assert_eq!(ReprFormat::SedDoaSde.branch_dims(c), vec![c, 3 * c, c]);
        assert_eq!(
            ReprFormat::SedDoaSde.activations(),
            vec![Activation::Sigmoid, Activation::Tanh, Activation::ReLU]
        );
        assert_eq!(ReprFormat::MultiAccdoa.activations(), vec![Activation::Linear]);
    }

    #[test]
    fn encode_leaves_inactive_cells_zero() {
        let (grid, classes) = setup(4, 2);
        let clip = Clip::new(vec![gt(1, 0, [1.0, 0.0, 0.0], 2.0)], grid, classes).unwrap();
        for format in ReprFormat::ALL {
            let enc = encode(&clip, format).unwrap();
            for (q, branch) in enc.branches().iter().enumerate() {
                for t in 0..4 {
                    if t == 1 {
                        continue;
                    }
                    assert!(
                        branch.row(t).iter().all(|&v| v == 0.0),
                        "{} branch {q} frame {t}",
                        format.name()
                    );
                }
            }
        }
    }

    #[test]
    fn encode_sce_scales_doa_by_distance() {
        let (grid, classes) = setup(2, 1);
        let clip = Clip::new(vec![gt(0, 0, [1.0, 0.0, 0.0], 2.5)], grid, classes).unwrap();
        let enc = encode(&clip, ReprFormat::SedSce).unwrap();
        assert_eq!(enc.branch(0)[(0, 0)], 1.0);
        assert_eq!(enc.branch(1)[(0, 0)], 2.5);
        assert_eq!(enc.branch(1)[(0, 1)], 0.0);
        assert_eq!(enc.branch(1)[(0, 2)], 0.0);
    }

    #[test]
    fn encode_multi_accdoa_extends_vector_with_distance() {
        let (grid, classes) = setup(2, 2);
        let clip = Clip::new(vec![gt(0, 1, [0.6, 0.8, 0.0], 5.0)], grid, classes).unwrap();
        let enc = encode(&clip, ReprFormat::MultiAccdoa).unwrap();
        let b = enc.branch(0);
        // track 0, class 1 -> columns 4..8
        assert_eq!(b[(0, 4)], 0.6);
        assert_eq!(b[(0, 5)], 0.8);
        assert_eq!(b[(0, 6)], 0.0);
        assert_eq!(b[(0, 7)], 5.0);
        // track 1 block untouched
        assert!(b.row(0).iter().skip(8).all(|&v| v == 0.0));
    }

    #[test]
    fn encode_rejects_excess_polyphony() {
        let (grid, classes) = setup(2, 2);
        let two = Clip::new(
            vec![gt(1, 0, [1.0, 0.0, 0.0], 1.0), gt(1, 0, [0.0, 1.0, 0.0], 2.0)],
            grid,
            classes.clone(),
        )
        .unwrap();
        let err = encode(&two, ReprFormat::SedDoa).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("class 0") && msg.contains("frame 1"), "{msg}");
        assert!(encode(&two, ReprFormat::MultiAccdoa).is_ok());

        let four = Clip::new(
            vec![
                gt(0, 1, [1.0, 0.0, 0.0], 1.0),
                gt(0, 1, [0.0, 1.0, 0.0], 2.0),
                gt(0, 1, [0.0, 0.0, 1.0], 3.0),
                gt(0, 1, [0.0, 0.0, -1.0], 4.0),
            ],
            grid,
            classes,
        )
        .unwrap();
        assert!(encode(&four, ReprFormat::MultiAccdoa).is_err());
    }

    #[test]
    fn decode_sce_recovers_direction_and_distance() {
        let (grid, classes) = setup(1, 1);
        let mut pred = TargetTensor::<f64>::zeros(ReprFormat::SedSce, 1, 1);
        pred.branch_mut(0)[(0, 0)] = 0.9;
        pred.branch_mut(1)[(0, 0)] = 3.0;
        pred.branch_mut(1)[(0, 1)] = 4.0;
        let clip = decode(&pred, &DecodeConfig::default(), grid, &classes).unwrap();
        assert_eq!(clip.annotations().len(), 1);
        let ann = &clip.annotations()[0];
        assert!((ann.doa[0] - 0.6).abs() < 1e-12);
        assert!((ann.doa[1] - 0.8).abs() < 1e-12);
        assert!((ann.distance - 5.0).abs() < 1e-12);
    }

    #[test]
    fn decode_respects_sed_threshold() {
        let (grid, classes) = setup(1, 1);
        let mut pred = TargetTensor::<f64>::zeros(ReprFormat::SedSde, 1, 1);
        pred.branch_mut(0)[(0, 0)] = 0.4;
        pred.branch_mut(1)[(0, 0)] = 2.0;
        let clip = decode(&pred, &DecodeConfig::default(), grid, &classes).unwrap();
        assert!(clip.annotations().is_empty());
    }

    #[test]
    fn decode_drops_degenerate_sce_vectors() {
        let (grid, classes) = setup(1, 1);
        let mut pred = TargetTensor::<f64>::zeros(ReprFormat::SedSce, 1, 1);
        pred.branch_mut(0)[(0, 0)] = 0.99;
        pred.branch_mut(1)[(0, 0)] = 1e-5;
        let clip = decode(&pred, &DecodeConfig::default(), grid, &classes).unwrap();
        assert!(clip.annotations().is_empty());
    }

    fn random_valid_clip(rng: &mut ChaCha8Rng, format: ReprFormat) -> Clip<f64> {
        let (grid, classes) = setup(8, 3);
        let mut annotations = Vec::new();
        for t in 0..8 {
            for cls in 0..3 {
                let n_here = rng.gen_range(0..=format.max_polyphony().min(3));
                for src in 0..n_here {
                    if rng.gen_bool(0.7) {
                        continue;
                    }
                    let az = rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI);
                    let el = rng.gen_range(-1.4..1.4);
                    annotations.push(
                        EventAnnotation::ground_truth(
                            t,
                            cls,
                            src,
                            doa_from_angles(az, el),
                            rng.gen_range(0.2..9.0),
                        )
                        .unwrap(),
                    );
                }
            }
        }
        Clip::new(annotations, grid, classes).unwrap()
    }

    #[test]
    fn encode_decode_round_trip_all_formats() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let cfg = DecodeConfig::default();
        for format in ReprFormat::ALL {
            for _ in 0..40 {
                let clip = random_valid_clip(&mut rng, format);
                let enc = encode(&clip, format).unwrap();
                let dec = decode(&enc, &cfg, clip.grid(), clip.classes()).unwrap();
                assert_eq!(
                    dec.annotations().len(),
                    clip.annotations().len(),
                    "{}",
                    format.name()
                );
                for (a, b) in clip.annotations().iter().zip(dec.annotations()) {
                    assert_eq!((a.frame, a.class_id), (b.frame, b.class_id));
                    assert_eq!(b.activity, 1.0, "{}", format.name());
                    if format != ReprFormat::SedSde {
                        for k in 0..3 {
                            assert!((a.doa[k] - b.doa[k]).abs() < 1e-6);
                        }
                    }
                    if format != ReprFormat::SedDoa {
                        assert!((a.distance - b.distance).abs() < 1e-6);
                    }
                }
            }
        }
    }

    #[test]
    fn combine_joint_averages_sed_scores() {
        let (grid, classes) = setup(1, 1);
        let mut doa = TargetTensor::<f64>::zeros(ReprFormat::SedDoa, 1, 1);
        let mut sde = TargetTensor::<f64>::zeros(ReprFormat::SedSde, 1, 1);
        doa.branch_mut(0)[(0, 0)] = 0.6;
        doa.branch_mut(1)[(0, 0)] = 1.0;
        sde.branch_mut(0)[(0, 0)] = 0.8;
        sde.branch_mut(1)[(0, 0)] = 3.5;
        let cfg = DecodeConfig::default();
        let clip = combine_joint(&doa, &sde, &cfg, grid, &classes).unwrap();
        assert_eq!(clip.annotations().len(), 1);
        let ann = &clip.annotations()[0];
        assert!((ann.activity - 0.7).abs() < 1e-12);
        assert_eq!(ann.doa, [1.0, 0.0, 0.0]);
        assert!((ann.distance - 3.5).abs() < 1e-12);

        // 0.9 and 0.0 average below threshold.
        doa.branch_mut(0)[(0, 0)] = 0.9;
        sde.branch_mut(0)[(0, 0)] = 0.0;
        let clip = combine_joint(&doa, &sde, &cfg, grid, &classes).unwrap();
        assert!(clip.annotations().is_empty());
    }

    #[test]
    fn combine_joint_sed_average_is_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let (grid, classes) = setup(6, 3);
        let mut doa = TargetTensor::<f64>::zeros(ReprFormat::SedDoa, 3, 6);
        let mut sde = TargetTensor::<f64>::zeros(ReprFormat::SedSde, 3, 6);
        for t in 0..6 {
            for c in 0..3 {
                doa.branch_mut(0)[(t, c)] = rng.gen_range(0.0..1.0);
                sde.branch_mut(0)[(t, c)] = rng.gen_range(0.0..1.0);
                doa.branch_mut(1)[(t, 3 * c)] = 1.0;
                sde.branch_mut(1)[(t, c)] = rng.gen_range(0.5..5.0);
            }
        }
        let cfg = DecodeConfig::default();
        let ab = combine_joint(&doa, &sde, &cfg, grid, &classes).unwrap();

        // Swap which model supplies which SED branch; activity must not change.
        let mut doa_swapped = doa.clone();
        let mut sde_swapped = sde.clone();
        *doa_swapped.branch_mut(0) = sde.branch(0).clone();
        *sde_swapped.branch_mut(0) = doa.branch(0).clone();
        let ba = combine_joint(&doa_swapped, &sde_swapped, &cfg, grid, &classes).unwrap();

        assert_eq!(ab.annotations().len(), ba.annotations().len());
        for (x, y) in ab.annotations().iter().zip(ba.annotations()) {
            assert_eq!((x.frame, x.class_id), (y.frame, y.class_id));
            assert!((x.activity - y.activity).abs() < 1e-12);
        }
    }

    #[test]
    fn combine_joint_checks_formats_and_shapes() {
        let (grid, classes) = setup(1, 1);
        let doa = TargetTensor::<f64>::zeros(ReprFormat::SedDoa, 1, 1);
        let sde = TargetTensor::<f64>::zeros(ReprFormat::SedSde, 1, 1);
        let cfg = DecodeConfig::default();
        assert!(combine_joint(&sde, &doa, &cfg, grid, &classes).is_err());
        let tall = TargetTensor::<f64>::zeros(ReprFormat::SedSde, 1, 2);
        assert!(combine_joint(&doa, &tall, &cfg, grid, &classes).is_err());
    }

    #[test]
    fn multi_accdoa_decode_is_track_permutation_invariant() {
        let (grid, classes) = setup(1, 1);
        let mut a = TargetTensor::<f64>::zeros(ReprFormat::MultiAccdoa, 1, 1);
        let mut b = TargetTensor::<f64>::zeros(ReprFormat::MultiAccdoa, 1, 1);
        let events = [([1.0, 0.0, 0.0], 2.0), ([0.0, 1.0, 0.0], 3.0)];
        for (track, (doa, d)) in events.iter().enumerate() {
            let base = track * 4;
            for k in 0..3 {
                a.branch_mut(0)[(0, base + k)] = doa[k];
            }
            a.branch_mut(0)[(0, base + 3)] = *d;
        }
        for (track, (doa, d)) in events.iter().rev().enumerate() {
            let base = track * 4;
            for k in 0..3 {
                b.branch_mut(0)[(0, base + k)] = doa[k];
            }
            b.branch_mut(0)[(0, base + 3)] = *d;
        }
        let cfg = DecodeConfig::default();
        let ca = decode(&a, &cfg, grid, &classes).unwrap();
        let cb = decode(&b, &cfg, grid, &classes).unwrap();
        let mut set_a: Vec<_> = ca
            .annotations()
            .iter()
            .map(|x| (format!("{:?}{:?}", x.doa, x.distance), x.frame, x.class_id))
            .collect();
        let mut set_b: Vec<_> = cb
            .annotations()
            .iter()
            .map(|x| (format!("{:?}{:?}", x.doa, x.distance), x.frame, x.class_id))
            .collect();
        set_a.sort();
        set_b.sort();
        assert_eq!(set_a, set_b);
    }
}
