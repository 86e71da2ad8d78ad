//! Audio channel swapping (ACS): spatially consistent FOA augmentation.
//!
//! Each variant applies a signed permutation to the X/Y dipole channels
//! (W untouched) together with the matching orthogonal map on label DOA
//! vectors, so a plane wave from direction `R` becomes a plane wave from
//! `label_op(R)`. The base set of 8 variants fixes Z; elevation flips are
//! available behind [`AcsVariant::with_z_flip`]. Distances never change.

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::features::AudioClip;
use crate::scalar::Scalar;
use crate::types::Clip;

/// Signed (X, Y) permutations: (new_x, new_y) drawn from +/-x, +/-y.
/// Ordered so that variant 0 is the identity.
const XY_OPS: [[[i8; 2]; 2]; 8] = [
    [[1, 0], [0, 1]],   // ( x,  y)
    [[1, 0], [0, -1]],  // ( x, -y)
    [[-1, 0], [0, 1]],  // (-x,  y)
    [[-1, 0], [0, -1]], // (-x, -y)
    [[0, 1], [1, 0]],   // ( y,  x)
    [[0, 1], [-1, 0]],  // ( y, -x)
    [[0, -1], [1, 0]],  // (-y,  x)
    [[0, -1], [-1, 0]], // (-y, -x)
];

/// One ACS transform: a signed channel permutation with its label map.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AcsVariant {
    id: u8,
    flip_z: bool,
}

impl AcsVariant {
    /// Number of base variants (Z fixed).
    pub const COUNT: u8 = 8;

    pub fn new(id: u8) -> Result<Self> {
        if id >= Self::COUNT {
            return Err(Error::validation(format!(
                "ACS variant id must be 0..{}, got {id}",
                Self::COUNT
            )));
        }
        Ok(Self { id, flip_z: false })
    }

    /// Same X/Y map with the elevation additionally mirrored.
    pub fn with_z_flip(id: u8) -> Result<Self> {
        Ok(Self {
            flip_z: true,
            ..Self::new(id)?
        })
    }

    pub fn id(&self) -> u8 {
        self.id
    }

    pub fn flips_z(&self) -> bool {
        self.flip_z
    }

    /// All 8 base variants.
    pub fn all() -> Vec<AcsVariant> {
        (0..Self::COUNT).map(|id| Self::new(id).unwrap()).collect()
    }

    /// The orthogonal map this variant applies to direction vectors.
    pub fn label_op<S: Scalar>(&self, doa: &[S; 3]) -> [S; 3] {
        let op = &XY_OPS[self.id as usize];
        let component = |row: &[i8; 2]| -> S {
            let mut acc = S::zero();
            if row[0] != 0 {
                acc = acc + S::cast(row[0] as f64) * doa[0];
            }
            if row[1] != 0 {
                acc = acc + S::cast(row[1] as f64) * doa[1];
            }
            acc
        };
        let z = if self.flip_z { -doa[2] } else { doa[2] };
        [component(&op[0]), component(&op[1]), z]
    }

    /// The variant that undoes this one.
    pub fn inverse(&self) -> AcsVariant {
        // Swap variants 5 and 6 are each other's inverses; all others are
        // involutions. Z flips invert themselves.
        let inv_id = match self.id {
            5 => 6,
            6 => 5,
            other => other,
        };
        AcsVariant {
            id: inv_id,
            flip_z: self.flip_z,
        }
    }
}

/// Applies the variant's signed channel permutation to FOA audio.
pub fn acs_audio<S: Scalar>(clip: &AudioClip<S>, v: AcsVariant) -> Result<AudioClip<S>> {
    let src = clip.samples();
    let n = src.ncols();
    let mut out = Array2::zeros((4, n));
    for i in 0..n {
        let xyz = [src[(1, i)], src[(2, i)], src[(3, i)]];
        let mapped = v.label_op(&xyz);
        out[(0, i)] = src[(0, i)];
        out[(1, i)] = mapped[0];
        out[(2, i)] = mapped[1];
        out[(3, i)] = mapped[2];
    }
    AudioClip::new(out, clip.sample_rate())
}

/// Applies the variant's orthogonal map to every label DOA.
///
/// Activity and distance are untouched: ACS rotates/reflects directions only.
pub fn acs_labels<S: Scalar>(clip: &Clip<S>, v: AcsVariant) -> Result<Clip<S>> {
    let annotations = clip
        .annotations()
        .iter()
        .map(|ann| {
            let mut moved = *ann;
            moved.doa = v.label_op(&ann.doa);
            moved
        })
        .collect();
    Clip::new(annotations, clip.grid(), clip.classes().clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::{doa_from_angles, ClassMap, EventAnnotation, FrameGrid};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_audio(seed: u64, n: usize) -> AudioClip<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        AudioClip::new(Array2::from_shape_fn((4, n), |_| rng.gen_range(-1.0..1.0)), 24000).unwrap()
    }

    fn random_labels(seed: u64) -> Clip<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let grid = FrameGrid::new(0.1, 2.0).unwrap();
        let classes = ClassMap::numbered(3).unwrap();
        let anns = (0..10)
            .map(|i| {
                EventAnnotation::ground_truth(
                    i,
                    rng.gen_range(0..3),
                    0,
                    doa_from_angles(rng.gen_range(-3.1..3.1), rng.gen_range(-1.5..1.5)),
                    rng.gen_range(0.3..8.0),
                )
                .unwrap()
            })
            .collect();
        Clip::new(anns, grid, classes).unwrap()
    }

    #[test]
    fn identity_variant_is_a_no_op() {
        let audio = random_audio(1, 512);
        let v = AcsVariant::new(0).unwrap();
        assert_eq!(acs_audio(&audio, v).unwrap(), audio);
        let labels = random_labels(2);
        assert_eq!(acs_labels(&labels, v).unwrap(), labels);
    }

    #[test]
    fn label_ops_are_orthogonal_and_norm_preserving() {
        for v in AcsVariant::all() {
            let e = [
                v.label_op(&[1.0_f64, 0.0, 0.0]),
                v.label_op(&[0.0_f64, 1.0, 0.0]),
                v.label_op(&[0.0_f64, 0.0, 1.0]),
            ];
            // Columns orthonormal.
            for i in 0..3 {
                for j in 0..3 {
                    let dot: f64 = (0..3).map(|k| e[i][k] * e[j][k]).sum();
                    let expected = if i == j { 1.0 } else { 0.0 };
                    assert!((dot - expected).abs() < 1e-12, "variant {}", v.id());
                }
            }
        }
    }

    #[test]
    fn swap_variant_exchanges_coordinates() {
        let v = AcsVariant::new(4).unwrap(); // (x, y) -> (y, x)
        assert_eq!(v.label_op(&[0.6_f64, 0.8, 0.0]), [0.8, 0.6, 0.0]);
    }

    #[test]
    fn each_variant_has_an_inverse_in_the_set() {
        let audio = random_audio(3, 256);
        for v in AcsVariant::all() {
            let there = acs_audio(&audio, v).unwrap();
            let back = acs_audio(&there, v.inverse()).unwrap();
            assert_eq!(back, audio, "variant {}", v.id());

            // And the inverse composes to the identity on labels too.
            let labels = random_labels(v.id() as u64 + 10);
            let moved = acs_labels(&labels, v).unwrap();
            let restored = acs_labels(&moved, v.inverse()).unwrap();
            for (a, b) in labels.annotations().iter().zip(restored.annotations()) {
                for k in 0..3 {
                    assert_eq!(a.doa[k], b.doa[k]);
                }
            }
        }
    }

    #[test]
    fn variants_form_a_closed_set_under_composition() {
        let probes = [
            [0.3_f64, -0.7, 0.648074069840786],
            [1.0, 0.0, 0.0],
            [0.0, 0.6, 0.8],
        ];
        for a in AcsVariant::all() {
            for b in AcsVariant::all() {
                // a then b must equal some single variant on every probe.
                let mut found = false;
                'candidates: for c in AcsVariant::all() {
                    for p in &probes {
                        let ab = b.label_op(&a.label_op(p));
                        let cc = c.label_op(p);
                        if (0..3).any(|k| (ab[k] - cc[k]).abs() > 1e-12) {
                            continue 'candidates;
                        }
                    }
                    found = true;
                    break;
                }
                assert!(found, "composition {} after {} left the set", b.id(), a.id());
            }
        }
    }

    #[test]
    fn distances_and_activity_are_invariant() {
        let labels = random_labels(5);
        for v in AcsVariant::all() {
            let moved = acs_labels(&labels, v).unwrap();
            for (a, b) in labels.annotations().iter().zip(moved.annotations()) {
                assert_eq!(a.distance.to_bits(), b.distance.to_bits());
                assert_eq!(a.activity, b.activity);
                assert_eq!((a.frame, a.class_id), (b.frame, b.class_id));
            }
        }
    }

    #[test]
    fn z_flip_mirrors_elevation() {
        let v = AcsVariant::with_z_flip(0).unwrap();
        assert_eq!(v.label_op(&[0.0_f64, 0.6, 0.8]), [0.0, 0.6, -0.8]);
        let audio = random_audio(6, 128);
        let flipped = acs_audio(&audio, v).unwrap();
        for i in 0..128 {
            assert_eq!(flipped.samples()[(3, i)], -audio.samples()[(3, i)]);
            assert_eq!(flipped.samples()[(0, i)], audio.samples()[(0, i)]);
        }
    }

    #[test]
    fn rejects_out_of_range_ids() {
        assert!(AcsVariant::new(8).is_err());
    }
}
