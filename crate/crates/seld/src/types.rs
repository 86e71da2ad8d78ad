//! Domain types shared by every module: class map, label-frame grid,
//! frame-level event annotations and clips.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Tolerance for the unit-norm check on ground-truth DOA vectors.
pub const DOA_NORM_TOL: f64 = 1e-6;

/// Ordered set of sound-event class names.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassMap {
    names: Vec<String>,
}

impl ClassMap {
    pub fn new(names: Vec<String>) -> Result<Self> {
        if names.is_empty() {
            return Err(Error::validation("class map needs at least one class"));
        }
        for (i, a) in names.iter().enumerate() {
            if names[..i].contains(a) {
                return Err(Error::validation(format!("duplicate class name `{a}`")));
            }
        }
        Ok(Self { names })
    }

    /// Anonymous classes `class0..class{n-1}`, for synthetic data.
    pub fn numbered(n: usize) -> Result<Self> {
        Self::new((0..n).map(|i| format!("class{i}")).collect())
    }

    /// Number of classes `C`.
    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn name(&self, class_id: usize) -> Option<&str> {
        self.names.get(class_id).map(String::as_str)
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }
}

/// Label-frame grid of a clip: `num_frames` frames of `label_hop` seconds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameGrid {
    label_hop: f64,
    clip_duration: f64,
}

impl FrameGrid {
    /// Default label resolution in seconds.
    pub const DEFAULT_LABEL_HOP: f64 = 0.1;

    pub fn new(label_hop: f64, clip_duration: f64) -> Result<Self> {
        if !(label_hop > 0.0) || !label_hop.is_finite() {
            return Err(Error::validation(format!(
                "label hop must be positive, got {label_hop}"
            )));
        }
        if !(clip_duration > 0.0) || !clip_duration.is_finite() {
            return Err(Error::validation(format!(
                "clip duration must be positive, got {clip_duration}"
            )));
        }
        Ok(Self {
            label_hop,
            clip_duration,
        })
    }

    /// Grid with the default 100 ms label hop.
    pub fn with_duration(clip_duration: f64) -> Result<Self> {
        Self::new(Self::DEFAULT_LABEL_HOP, clip_duration)
    }

    pub fn label_hop(&self) -> f64 {
        self.label_hop
    }

    pub fn clip_duration(&self) -> f64 {
        self.clip_duration
    }

    /// Number of label frames `T = ceil(duration / hop)`.
    ///
    /// Exact multiples are snapped before the ceiling so representation noise
    /// in `duration / hop` cannot add a spurious frame.
    pub fn num_frames(&self) -> usize {
        let ratio = self.clip_duration / self.label_hop;
        let rounded = ratio.round();
        if (ratio - rounded).abs() < 1e-9 {
            rounded as usize
        } else {
            ratio.ceil() as usize
        }
    }
}

/// One active (or predicted-active) event in one label frame.
///
/// `activity` is 1 for ground truth and a score in `[0, 1]` for predictions.
/// `source` carries the track index for multi-track formats and is ignored
/// everywhere else.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EventAnnotation<S: Scalar> {
    pub frame: usize,
    pub class_id: usize,
    pub source: usize,
    pub activity: S,
    pub doa: [S; 3],
    pub distance: S,
}

impl<S: Scalar> EventAnnotation<S> {
    /// Ground-truth event: activity 1, checked unit-norm DOA, positive distance.
    pub fn ground_truth(
        frame: usize,
        class_id: usize,
        source: usize,
        doa: [S; 3],
        distance: S,
    ) -> Result<Self> {
        let norm = doa_norm(&doa).as_f64();
        if (norm - 1.0).abs() > DOA_NORM_TOL {
            return Err(Error::validation(format!(
                "DOA must be unit-norm for an active event (frame {frame}, class {class_id}): |R| = {norm}"
            )));
        }
        if !(distance > S::zero()) || !distance.is_finite() {
            return Err(Error::validation(format!(
                "distance must be positive (frame {frame}, class {class_id}): d = {distance}"
            )));
        }
        Ok(Self {
            frame,
            class_id,
            source,
            activity: S::one(),
            doa,
            distance,
        })
    }

    /// Azimuth in radians, counterclockwise from +x.
    pub fn azimuth(&self) -> S {
        self.doa[1].atan2(self.doa[0])
    }

    /// Elevation in radians, up-positive.
    pub fn elevation(&self) -> S {
        clamp_unit(self.doa[2]).asin()
    }
}

/// DOA unit vector from azimuth/elevation in radians.
pub fn doa_from_angles<S: Scalar>(azimuth: S, elevation: S) -> [S; 3] {
    [
        azimuth.cos() * elevation.cos(),
        azimuth.sin() * elevation.cos(),
        elevation.sin(),
    ]
}

pub(crate) fn doa_norm<S: Scalar>(doa: &[S; 3]) -> S {
    (doa[0] * doa[0] + doa[1] * doa[1] + doa[2] * doa[2]).sqrt()
}

fn clamp_unit<S: Scalar>(x: S) -> S {
    x.max(-S::one()).min(S::one())
}

/// Frame-level annotations for one audio clip, in canonical order
/// (frame-major, then class, preserving appearance order within a cell).
#[derive(Debug, Clone, PartialEq)]
pub struct Clip<S: Scalar> {
    annotations: Vec<EventAnnotation<S>>,
    grid: FrameGrid,
    classes: ClassMap,
}

impl<S: Scalar> Clip<S> {
    pub fn new(
        mut annotations: Vec<EventAnnotation<S>>,
        grid: FrameGrid,
        classes: ClassMap,
    ) -> Result<Self> {
        let num_frames = grid.num_frames();
        for ann in &annotations {
            if ann.frame >= num_frames {
                return Err(Error::validation(format!(
                    "frame {} outside grid of {} frames",
                    ann.frame, num_frames
                )));
            }
            if ann.class_id >= classes.len() {
                return Err(Error::validation(format!(
                    "class {} outside class map of {} classes",
                    ann.class_id,
                    classes.len()
                )));
            }
        }
        annotations.sort_by(|a, b| (a.frame, a.class_id).cmp(&(b.frame, b.class_id)));
        Ok(Self {
            annotations,
            grid,
            classes,
        })
    }

    pub fn empty(grid: FrameGrid, classes: ClassMap) -> Self {
        Self {
            annotations: Vec::new(),
            grid,
            classes,
        }
    }

    pub fn annotations(&self) -> &[EventAnnotation<S>] {
        &self.annotations
    }

    pub fn grid(&self) -> FrameGrid {
        self.grid
    }

    pub fn classes(&self) -> &ClassMap {
        &self.classes
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn num_frames(&self) -> usize {
        self.grid.num_frames()
    }

    /// Events of one class in one frame, in appearance order.
    pub fn events_at(&self, frame: usize, class_id: usize) -> Vec<&EventAnnotation<S>> {
        self.annotations
            .iter()
            .filter(|a| a.frame == frame && a.class_id == class_id)
            .collect()
    }

    /// Largest number of same-class events sharing a frame.
    pub fn max_polyphony(&self) -> usize {
        let mut max = 0;
        let mut i = 0;
        while i < self.annotations.len() {
            let key = (self.annotations[i].frame, self.annotations[i].class_id);
            let mut j = i;
            while j < self.annotations.len()
                && (self.annotations[j].frame, self.annotations[j].class_id) == key
            {
                j += 1;
            }
            max = max.max(j - i);
            i = j;
        }
        max
    }

    /// True when grids and class counts line up for comparison.
    pub fn compatible_with(&self, other: &Clip<S>) -> bool {
        self.grid == other.grid && self.classes.len() == other.classes.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn class_map_rejects_duplicates_and_empty() {
        assert!(ClassMap::new(vec![]).is_err());
        assert!(ClassMap::new(vec!["a".into(), "a".into()]).is_err());
        let m = ClassMap::new(vec!["speech".into(), "music".into()]).unwrap();
        assert_eq!(m.len(), 2);
        assert_eq!(m.name(1), Some("music"));
    }

    #[test]
    fn frame_grid_counts_frames_with_ceiling() {
        let g = FrameGrid::new(0.1, 10.0).unwrap();
        assert_eq!(g.num_frames(), 100);
        let g = FrameGrid::new(0.1, 10.05).unwrap();
        assert_eq!(g.num_frames(), 101);
        assert!(FrameGrid::new(0.0, 1.0).is_err());
        assert!(FrameGrid::new(0.1, 0.0).is_err());
    }

    #[test]
    fn ground_truth_requires_unit_doa_and_positive_distance() {
        let ok = EventAnnotation::<f64>::ground_truth(0, 0, 0, [1.0, 0.0, 0.0], 2.0);
        assert!(ok.is_ok());
        let bad_norm = EventAnnotation::<f64>::ground_truth(0, 0, 0, [1.0, 1.0, 0.0], 2.0);
        assert!(bad_norm.is_err());
        let bad_dist = EventAnnotation::<f64>::ground_truth(0, 0, 0, [1.0, 0.0, 0.0], 0.0);
        assert!(bad_dist.is_err());
    }

    #[test]
    fn clip_sorts_annotations_and_validates_ranges() {
        let grid = FrameGrid::new(0.1, 1.0).unwrap();
        let classes = ClassMap::numbered(3).unwrap();
        let a = EventAnnotation::<f64>::ground_truth(5, 1, 0, [0.0, 1.0, 0.0], 1.0).unwrap();
        let b = EventAnnotation::<f64>::ground_truth(2, 2, 0, [1.0, 0.0, 0.0], 1.5).unwrap();
        let clip = Clip::new(vec![a, b], grid, classes.clone()).unwrap();
        assert_eq!(clip.annotations()[0].frame, 2);
        assert_eq!(clip.annotations()[1].frame, 5);

        let out_of_grid =
            EventAnnotation::<f64>::ground_truth(99, 0, 0, [1.0, 0.0, 0.0], 1.0).unwrap();
        assert!(Clip::new(vec![out_of_grid], grid, classes.clone()).is_err());
        let bad_class =
            EventAnnotation::<f64>::ground_truth(0, 7, 0, [1.0, 0.0, 0.0], 1.0).unwrap();
        assert!(Clip::new(vec![bad_class], grid, classes).is_err());
    }

    #[test]
    fn polyphony_counts_same_cell_events() {
        let grid = FrameGrid::new(0.1, 1.0).unwrap();
        let classes = ClassMap::numbered(2).unwrap();
        let mk = |frame, class_id, src| {
            EventAnnotation::<f64>::ground_truth(frame, class_id, src, [0.0, 0.0, 1.0], 1.0)
                .unwrap()
        };
        let clip = Clip::new(
            vec![mk(0, 0, 0), mk(0, 0, 1), mk(0, 1, 0), mk(3, 0, 0)],
            grid,
            classes,
        )
        .unwrap();
        assert_eq!(clip.max_polyphony(), 2);
        assert_eq!(clip.events_at(0, 0).len(), 2);
    }
}
