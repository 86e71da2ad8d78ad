//! 3D sound event localization and detection (SELD) toolkit.
//!
//! Covers the full desk-scale pipeline for joint detection, direction-of-arrival
//! and source-distance modeling on first-order Ambisonics audio:
//!
//! - [`features`]: log-Mel + intensity-vector feature extraction from FOA clips.
//! - [`repr`]: the five output-representation codecs (multi-ACCDOA, SED-DOA,
//!   SED-SDE, SED-SCE, SED-DOA-SDE) plus the two-model joint-prediction combiner.
//! - [`losses`]: all training objectives with analytic gradients.
//! - [`metrics`]: frame-based F1 / DOA error / relative distance error and the
//!   composite scores.
//! - [`augment`]: spatially consistent audio channel swapping (ACS).
//! - [`sim`]: synthetic anechoic point-source scenes with exact labels.
//! - [`model`]: a small trainable multi-branch network exercising everything above.
//!
//! All numeric kernels are generic over the working [`Scalar`] precision
//! (`f32` or `f64`); the `*64` aliases at the crate root pick `f64`, which the
//! CLI and the test suites use.

pub mod augment;
pub mod error;
pub mod features;
pub mod io;
pub mod labels;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod repr;
pub mod scalar;
pub mod sim;
pub mod types;

pub use error::{Error, Result};
pub use scalar::Scalar;
pub use types::{ClassMap, Clip, EventAnnotation, FrameGrid};

/// Default working precision for the CLI and the acceptance suites.
pub type AudioClip64 = features::AudioClip<f64>;
pub type SpectralFeatures64 = features::SpectralFeatures<f64>;
pub type Clip64 = types::Clip<f64>;
pub type TargetTensor64 = repr::TargetTensor<f64>;
pub type Model64 = model::SeldModel<f64>;
