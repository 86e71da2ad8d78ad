//! Frame-based evaluation: location-and-distance-dependent F1, DOA error,
//! relative distance error and the composite scores.
//!
//! Predictions and ground truths of the same class in the same label frame
//! are paired by an optimal assignment minimizing total angular distance.
//! A matched pair is a true positive only if it passes the enabled angular
//! and relative-distance thresholds; pairs over threshold count as one false
//! positive plus one false negative. DOA and distance errors accumulate over
//! every matched pair, independent of the thresholds.

use std::collections::BTreeMap;

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::types::Clip;

/// Matching thresholds and the per-model metric variants.
///
/// `use_distance = false` evaluates detection + DOA only (SED-DOA models);
/// `use_angular = false` evaluates detection + distance only (SED-SDE models).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricThresholds {
    /// Angular true-positive threshold in degrees.
    pub angular_deg: f64,
    /// Relative distance true-positive threshold (1.0 = 100%).
    pub relative_distance: f64,
    pub use_angular: bool,
    pub use_distance: bool,
}

impl Default for MetricThresholds {
    fn default() -> Self {
        Self {
            angular_deg: 20.0,
            relative_distance: 1.0,
            use_angular: true,
            use_distance: true,
        }
    }
}

impl MetricThresholds {
    pub fn validate(&self) -> Result<()> {
        if !(self.angular_deg > 0.0 && self.angular_deg <= 180.0) {
            return Err(Error::validation(format!(
                "angular threshold must lie in (0, 180], got {}",
                self.angular_deg
            )));
        }
        if !(self.relative_distance > 0.0) {
            return Err(Error::validation(format!(
                "relative distance threshold must be positive, got {}",
                self.relative_distance
            )));
        }
        Ok(())
    }
}

/// One matched ground-truth/prediction pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchedPair {
    pub angular_deg: f64,
    pub gt_distance: f64,
    pub pred_distance: f64,
}

impl MatchedPair {
    pub fn relative_distance_error(&self) -> f64 {
        (self.pred_distance - self.gt_distance).abs() / self.gt_distance
    }
}

/// Detection counts plus all matched pairs, mergeable across clips.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MatchCounts {
    pub true_positives: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
    pub pairs: Vec<MatchedPair>,
}

impl MatchCounts {
    /// Associative reduction over per-clip counts.
    pub fn merge(&mut self, other: MatchCounts) {
        self.true_positives += other.true_positives;
        self.false_positives += other.false_positives;
        self.false_negatives += other.false_negatives;
        self.pairs.extend(other.pairs);
    }

    /// True when either clip contained any event.
    pub fn any_events(&self) -> bool {
        self.true_positives + self.false_positives + self.false_negatives > 0
    }
}

/// Full evaluation report.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub f1: f64,
    pub doae_deg: f64,
    pub rde: f64,
    pub seld_score: f64,
    pub sed_sde_score: f64,
    pub true_positives: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
    pub matched_pairs: usize,
}

impl MetricsReport {
    pub fn from_counts(counts: &MatchCounts) -> Self {
        let f1 = f1_score(counts);
        let doae_deg = doae(counts);
        let rde_val = rde(counts);
        Self {
            f1,
            doae_deg,
            rde: rde_val,
            seld_score: seld_score(f1, doae_deg, rde_val),
            sed_sde_score: sed_sde_score(f1, rde_val),
            true_positives: counts.true_positives,
            false_positives: counts.false_positives,
            false_negatives: counts.false_negatives,
            matched_pairs: counts.pairs.len(),
        }
    }
}

/// Angular distance between two unit vectors, in degrees.
pub fn angular_distance_deg<S: Scalar>(a: &[S; 3], b: &[S; 3]) -> f64 {
    let dot = (a[0] * b[0] + a[1] * b[1] + a[2] * b[2]).as_f64();
    dot.clamp(-1.0, 1.0).acos().to_degrees()
}

/// Matches one predicted clip against ground truth and tallies counts.
pub fn match_and_count<S: Scalar>(
    gt: &Clip<S>,
    pred: &Clip<S>,
    thr: &MetricThresholds,
) -> Result<MatchCounts> {
    thr.validate()?;
    if !gt.compatible_with(pred) {
        return Err(Error::validation(
            "clips disagree on frame grid or class count".to_string(),
        ));
    }

    // Group both sides by (frame, class); BTreeMap keeps reduction order stable.
    let mut cells: BTreeMap<(usize, usize), (Vec<usize>, Vec<usize>)> = BTreeMap::new();
    for (i, ann) in gt.annotations().iter().enumerate() {
        cells.entry((ann.frame, ann.class_id)).or_default().0.push(i);
    }
    for (i, ann) in pred.annotations().iter().enumerate() {
        cells.entry((ann.frame, ann.class_id)).or_default().1.push(i);
    }

    let mut counts = MatchCounts::default();
    for ((_, _), (gt_idx, pred_idx)) in cells {
        let n_gt = gt_idx.len();
        let n_pred = pred_idx.len();
        if n_gt == 0 {
            counts.false_positives += n_pred;
            continue;
        }
        if n_pred == 0 {
            counts.false_negatives += n_gt;
            continue;
        }

        let cost = Array2::from_shape_fn((n_gt, n_pred), |(i, j)| {
            angular_distance_deg(
                &gt.annotations()[gt_idx[i]].doa,
                &pred.annotations()[pred_idx[j]].doa,
            )
        });
        let assignment = min_cost_assignment(&cost);

        for &(i, j) in &assignment {
            let g = &gt.annotations()[gt_idx[i]];
            let p = &pred.annotations()[pred_idx[j]];
            let pair = MatchedPair {
                angular_deg: cost[(i, j)],
                gt_distance: g.distance.as_f64(),
                pred_distance: p.distance.as_f64(),
            };
            let ang_ok = !thr.use_angular || pair.angular_deg <= thr.angular_deg;
            let dist_ok =
                !thr.use_distance || pair.relative_distance_error() <= thr.relative_distance;
            if ang_ok && dist_ok {
                counts.true_positives += 1;
            } else {
                counts.false_positives += 1;
                counts.false_negatives += 1;
            }
            counts.pairs.push(pair);
        }
        let matched = assignment.len();
        counts.false_negatives += n_gt - matched;
        counts.false_positives += n_pred - matched;
    }
    Ok(counts)
}

/// F1 from counts: `2TP / (2TP + FP + FN)`, and 1 when there is nothing to
/// detect and nothing was predicted.
pub fn f1_score(counts: &MatchCounts) -> f64 {
    let denom = 2 * counts.true_positives + counts.false_positives + counts.false_negatives;
    if denom == 0 {
        1.0
    } else {
        2.0 * counts.true_positives as f64 / denom as f64
    }
}

/// Mean angular error over matched pairs, in degrees.
///
/// With no matched pairs the error is 180 when any events exist (worst case,
/// keeping composite scores defined) and 0 when both clips are empty.
pub fn doae(counts: &MatchCounts) -> f64 {
    if counts.pairs.is_empty() {
        return if counts.any_events() { 180.0 } else { 0.0 };
    }
    counts.pairs.iter().map(|p| p.angular_deg).sum::<f64>() / counts.pairs.len() as f64
}

/// Mean relative distance error over matched pairs.
///
/// With no matched pairs: 1 (the 100% worst case) when any events exist,
/// 0 when both clips are empty.
pub fn rde(counts: &MatchCounts) -> f64 {
    if counts.pairs.is_empty() {
        return if counts.any_events() { 1.0 } else { 0.0 };
    }
    counts
        .pairs
        .iter()
        .map(MatchedPair::relative_distance_error)
        .sum::<f64>()
        / counts.pairs.len() as f64
}

/// Composite 3D SELD score: `((1 - F1) + DOAE/180 + RDE) / 3`.
pub fn seld_score(f1: f64, doae_deg: f64, rde: f64) -> f64 {
    ((1.0 - f1) + doae_deg / 180.0 + rde) / 3.0
}

/// Detection + distance composite: `((1 - F1) + RDE) / 2`.
pub fn sed_sde_score(f1: f64, rde: f64) -> f64 {
    ((1.0 - f1) + rde) / 2.0
}

/// Evaluates one prediction clip against ground truth.
pub fn evaluate<S: Scalar>(
    gt: &Clip<S>,
    pred: &Clip<S>,
    thr: &MetricThresholds,
) -> Result<MetricsReport> {
    Ok(MetricsReport::from_counts(&match_and_count(gt, pred, thr)?))
}

/// Evaluates paired clips jointly, reducing counts before scoring.
pub fn evaluate_all<S: Scalar>(
    pairs: &[(Clip<S>, Clip<S>)],
    thr: &MetricThresholds,
) -> Result<MetricsReport> {
    let mut counts = MatchCounts::default();
    for (gt, pred) in pairs {
        counts.merge(match_and_count(gt, pred, thr)?);
    }
    Ok(MetricsReport::from_counts(&counts))
}

/// Minimum-cost assignment (Hungarian algorithm with potentials, O(n^3)).
///
/// Returns `min(rows, cols)` pairs `(row, col)` minimizing the total cost;
/// every cost must be finite.
pub fn min_cost_assignment(cost: &Array2<f64>) -> Vec<(usize, usize)> {
    let (rows, cols) = cost.dim();
    if rows == 0 || cols == 0 {
        return Vec::new();
    }
    if rows > cols {
        let transposed = Array2::from_shape_fn((cols, rows), |(i, j)| cost[(j, i)]);
        return min_cost_assignment(&transposed)
            .into_iter()
            .map(|(i, j)| (j, i))
            .collect();
    }

    // 1-indexed potentials; p[j] is the row matched to column j.
    let (n, m) = (rows, cols);
    let mut u = vec![0.0_f64; n + 1];
    let mut v = vec![0.0_f64; m + 1];
    let mut p = vec![0_usize; m + 1];
    let mut way = vec![0_usize; m + 1];

    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0_usize;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0_usize;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let cur = cost[(i0 - 1, j - 1)] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    let mut result = Vec::with_capacity(n);
    for j in 1..=m {
        if p[j] != 0 {
            result.push((p[j] - 1, j - 1));
        }
    }
    result.sort_unstable();
    result
}
