//! Label CSV exchange format.
//!
//! One event-frame per row, columns
//! `frame,class,source,azimuth_deg,elevation_deg,distance_m`, UTF-8, LF line
//! endings, no header (a literal header line is tolerated on input and
//! skipped). Angles are degrees in files and radians internally; azimuth is
//! counterclockwise from +x, elevation up-positive.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::types::{doa_from_angles, ClassMap, Clip, EventAnnotation, FrameGrid};

const HEADER: &str = "frame,class,source,azimuth_deg,elevation_deg,distance_m";

/// Parses label CSV content into a [`Clip`].
pub fn parse_labels<S: Scalar>(text: &str, grid: FrameGrid, classes: &ClassMap) -> Result<Clip<S>> {
    let mut annotations = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() || (idx == 0 && line == HEADER) {
            continue;
        }
        annotations.push(parse_row(line, line_no, grid, classes)?);
    }
    Clip::new(annotations, grid, classes.clone())
}

fn parse_row<S: Scalar>(
    line: &str,
    line_no: usize,
    grid: FrameGrid,
    classes: &ClassMap,
) -> Result<EventAnnotation<S>> {
    let fields: Vec<&str> = line.split(',').map(str::trim).collect();
    if fields.len() != 6 {
        return Err(Error::Parse {
            line: line_no,
            msg: format!("expected 6 comma-separated fields, got {}", fields.len()),
        });
    }
    let int = |i: usize, what: &str| -> Result<usize> {
        fields[i].parse::<usize>().map_err(|_| Error::Parse {
            line: line_no,
            msg: format!("{what} `{}` is not a non-negative integer", fields[i]),
        })
    };
    let float = |i: usize, what: &str| -> Result<f64> {
        fields[i]
            .parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .ok_or_else(|| Error::Parse {
                line: line_no,
                msg: format!("{what} `{}` is not a finite number", fields[i]),
            })
    };

    let frame = int(0, "frame")?;
    let class_id = int(1, "class")?;
    let source = int(2, "source")?;
    let azimuth_deg = float(3, "azimuth")?;
    let elevation_deg = float(4, "elevation")?;
    let distance = float(5, "distance")?;

    if frame >= grid.num_frames() {
        return Err(Error::validation(format!(
            "line {line_no}: frame {frame} outside grid of {} frames",
            grid.num_frames()
        )));
    }
    if class_id >= classes.len() {
        return Err(Error::validation(format!(
            "line {line_no}: class {class_id} outside class map of {} classes",
            classes.len()
        )));
    }
    if distance <= 0.0 {
        return Err(Error::validation(format!(
            "line {line_no}: distance must be positive, got {distance}"
        )));
    }

    let doa = doa_from_angles(S::cast(azimuth_deg.to_radians()), S::cast(elevation_deg.to_radians()));
    EventAnnotation::ground_truth(frame, class_id, source, doa, S::cast(distance))
}

/// Serializes a [`Clip`] back to CSV content (inverse of [`parse_labels`]).
pub fn write_labels<S: Scalar>(clip: &Clip<S>) -> String {
    let mut out = String::new();
    for ann in clip.annotations() {
        let az_deg = ann.azimuth().as_f64().to_degrees();
        let el_deg = ann.elevation().as_f64().to_degrees();
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            ann.frame,
            ann.class_id,
            ann.source,
            az_deg,
            el_deg,
            ann.distance.as_f64()
        ));
    }
    out
}
