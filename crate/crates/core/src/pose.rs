//! Pose, descriptor and dataset types shared by every stage of the pipeline.

use std::collections::HashSet;
use std::fmt;

use nalgebra::{DMatrix, Matrix3, Quaternion, UnitQuaternion, Vector3};
use thiserror::Error;

/// Quaternions with a norm at or below this are rejected as degenerate.
pub const MIN_QUATERNION_NORM: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PoseError {
    #[error("quaternion norm {0:e} is too small to normalize")]
    DegenerateQuaternion(f64),
    #[error("pose component {index} is not finite")]
    NonFinite { index: usize },
}

/// A 6-DOF camera pose: unit quaternion `(qa, qb, qc, qd)` (scalar first)
/// and camera center `t` in meters.
///
/// Values of this type are always canonical: the quaternion has unit norm and
/// its first nonzero component is non-negative.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseVector {
    q: [f64; 4],
    t: [f64; 3],
}

impl PoseVector {
    /// Builds a pose, normalizing and sign-canonicalizing the quaternion.
    pub fn new(q: [f64; 4], t: [f64; 3]) -> Result<Self, PoseError> {
        canonicalize_pose(q, t)
    }

    pub fn identity() -> Self {
        PoseVector {
            q: [1.0, 0.0, 0.0, 0.0],
            t: [0.0; 3],
        }
    }

    /// Builds a pose from the 7-vector layout `[qa, qb, qc, qd, t1, t2, t3]`.
    pub fn from_components(c: &[f64; 7]) -> Result<Self, PoseError> {
        Self::new([c[0], c[1], c[2], c[3]], [c[4], c[5], c[6]])
    }

    pub fn quaternion(&self) -> [f64; 4] {
        self.q
    }

    pub fn translation(&self) -> [f64; 3] {
        self.t
    }

    /// The 7-vector `[qa, qb, qc, qd, t1, t2, t3]`.
    pub fn components(&self) -> [f64; 7] {
        [
            self.q[0], self.q[1], self.q[2], self.q[3], self.t[0], self.t[1], self.t[2],
        ]
    }

    pub fn translation_vector(&self) -> Vector3<f64> {
        Vector3::from(self.t)
    }

    pub fn unit_quaternion(&self) -> UnitQuaternion<f64> {
        UnitQuaternion::new_unchecked(Quaternion::new(self.q[0], self.q[1], self.q[2], self.q[3]))
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        self.unit_quaternion().to_rotation_matrix().into_inner()
    }

    /// Same rotation, new camera center.
    pub fn with_translation(&self, t: [f64; 3]) -> Result<Self, PoseError> {
        Self::new(self.q, t)
    }

    pub fn translation_error(&self, other: &PoseVector) -> f64 {
        (self.translation_vector() - other.translation_vector()).norm()
    }

    pub fn rotation_error_deg(&self, other: &PoseVector) -> f64 {
        rotation_error_deg(&self.q, &other.q)
    }
}

impl fmt::Display for PoseVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "q=({:.6}, {:.6}, {:.6}, {:.6}) t=({:.4}, {:.4}, {:.4})",
            self.q[0], self.q[1], self.q[2], self.q[3], self.t[0], self.t[1], self.t[2]
        )
    }
}

/// Normalizes `q` and flips its sign so the first nonzero component is
/// non-negative. The translation is passed through.
pub fn canonicalize_pose(q: [f64; 4], t: [f64; 3]) -> Result<PoseVector, PoseError> {
    for (index, v) in q.iter().chain(t.iter()).enumerate() {
        if !v.is_finite() {
            return Err(PoseError::NonFinite { index });
        }
    }
    let norm = q.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm <= MIN_QUATERNION_NORM {
        return Err(PoseError::DegenerateQuaternion(norm));
    }
    // already-unit input is left bit-identical so canonicalization is idempotent
    let mut unit = if (norm - 1.0).abs() <= 2.0 * f64::EPSILON {
        q
    } else {
        q.map(|v| v / norm)
    };
    if let Some(first) = unit.iter().copied().find(|v| *v != 0.0) {
        if first < 0.0 {
            unit = unit.map(|v| -v);
        }
    }
    // -0.0 would encode with the sign bit set
    let unit = unit.map(|v| if v == 0.0 { 0.0 } else { v });
    Ok(PoseVector { q: unit, t })
}

/// Angular distance between two unit quaternions in degrees, in `[0, 180]`.
///
/// Uses `2 acos(|<q1, q2>|)` so `q` and `-q` are the same rotation.
pub fn rotation_error_deg(q1: &[f64; 4], q2: &[f64; 4]) -> f64 {
    let dot: f64 = q1.iter().zip(q2).map(|(a, b)| a * b).sum();
    2.0 * dot.abs().min(1.0).acos().to_degrees()
}

/// One training or query item.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: String,
    pub descriptor: Vec<f64>,
    pub pose: PoseVector,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DatasetError {
    #[error("dataset is empty")]
    Empty,
    #[error("descriptor dimension must be positive")]
    ZeroDimension,
    #[error("item {id:?} has descriptor dimension {got}, expected {expected}")]
    DimensionMismatch {
        id: String,
        expected: usize,
        got: usize,
    },
    #[error("duplicate item id {0:?}")]
    DuplicateId(String),
    #[error("item {0:?} has a non-finite descriptor entry")]
    NonFiniteDescriptor(String),
}

/// An ordered list of (id, descriptor, pose) triples with a uniform
/// descriptor dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    items: Vec<Sample>,
    dim: usize,
}

impl Dataset {
    pub fn new(items: Vec<Sample>) -> Result<Self, DatasetError> {
        let dim = items.first().ok_or(DatasetError::Empty)?.descriptor.len();
        if dim == 0 {
            return Err(DatasetError::ZeroDimension);
        }
        let mut seen = HashSet::with_capacity(items.len());
        for item in &items {
            if item.descriptor.len() != dim {
                return Err(DatasetError::DimensionMismatch {
                    id: item.id.clone(),
                    expected: dim,
                    got: item.descriptor.len(),
                });
            }
            if item.descriptor.iter().any(|v| !v.is_finite()) {
                return Err(DatasetError::NonFiniteDescriptor(item.id.clone()));
            }
            if !seen.insert(item.id.as_str()) {
                return Err(DatasetError::DuplicateId(item.id.clone()));
            }
        }
        Ok(Dataset { items, dim })
    }

    pub fn items(&self) -> &[Sample] {
        &self.items
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Descriptor dimension `d`.
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn poses(&self) -> Vec<PoseVector> {
        self.items.iter().map(|s| s.pose).collect()
    }

    /// The `N x d` descriptor matrix, one row per item.
    pub fn descriptor_matrix(&self) -> DMatrix<f64> {
        self.descriptor_matrix_for(&(0..self.len()).collect::<Vec<_>>())
    }

    /// Descriptor rows for the given item indices, in that order.
    pub fn descriptor_matrix_for(&self, indices: &[usize]) -> DMatrix<f64> {
        DMatrix::from_fn(indices.len(), self.dim, |i, j| {
            self.items[indices[i]].descriptor[j]
        })
    }

    /// Subset of items by index, preserving order.
    pub fn subset(&self, indices: &[usize]) -> Result<Dataset, DatasetError> {
        Dataset::new(indices.iter().map(|&i| self.items[i].clone()).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn identity_is_unchanged() {
        let p = PoseVector::new([1.0, 0.0, 0.0, 0.0], [0.0; 3]).unwrap();
        assert_eq!(p, PoseVector::identity());
    }

    #[test]
    fn negative_scalar_is_flipped() {
        let p = PoseVector::new([-1.0, 0.0, 0.0, 0.0], [1.0, 2.0, 3.0]).unwrap();
        assert_eq!(p.quaternion(), [1.0, 0.0, 0.0, 0.0]);
        assert_eq!(p.translation(), [1.0, 2.0, 3.0]);
    }

    #[test]
    fn scaled_quaternion_is_normalized() {
        let p = PoseVector::new([2.0, 0.0, 0.0, 0.0], [0.0; 3]).unwrap();
        assert_eq!(p.quaternion(), [1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn sign_follows_first_nonzero_component() {
        let p = PoseVector::new([0.0, -0.6, 0.8, 0.0], [0.0; 3]).unwrap();
        assert_eq!(p.quaternion(), [0.0, 0.6, -0.8, 0.0]);
        assert!(p.quaternion()[3].is_sign_positive());
    }

    #[test]
    fn degenerate_quaternion_rejected() {
        assert!(matches!(
            PoseVector::new([1e-10, 0.0, 0.0, 0.0], [0.0; 3]),
            Err(PoseError::DegenerateQuaternion(_))
        ));
        assert!(matches!(
            PoseVector::new([1.0, 0.0, 0.0, 0.0], [f64::NAN, 0.0, 0.0]),
            Err(PoseError::NonFinite { index: 4 })
        ));
    }

    #[test]
    fn rotation_error_examples() {
        let id = [1.0, 0.0, 0.0, 0.0];
        assert_eq!(rotation_error_deg(&id, &id), 0.0);
        assert_eq!(rotation_error_deg(&id, &[-1.0, 0.0, 0.0, 0.0]), 0.0);
        let h = std::f64::consts::FRAC_PI_4;
        assert_abs_diff_eq!(
            rotation_error_deg(&id, &[h.cos(), h.sin(), 0.0, 0.0]),
            90.0,
            epsilon = 1e-9
        );
    }

    #[test]
    fn rotation_error_matches_nalgebra_angle() {
        let a = UnitQuaternion::from_euler_angles(0.1, -0.4, 0.7);
        let b = UnitQuaternion::from_euler_angles(-0.3, 0.2, 1.1);
        let qa = [a.w, a.i, a.j, a.k];
        let qb = [b.w, b.i, b.j, b.k];
        assert_abs_diff_eq!(
            rotation_error_deg(&qa, &qb),
            a.angle_to(&b).to_degrees(),
            epsilon = 1e-6
        );
    }

    #[test]
    fn dataset_validation() {
        let s = |id: &str, d: Vec<f64>| Sample {
            id: id.into(),
            descriptor: d,
            pose: PoseVector::identity(),
        };
        assert_eq!(Dataset::new(vec![]), Err(DatasetError::Empty));
        assert!(matches!(
            Dataset::new(vec![s("a", vec![1.0]), s("a", vec![2.0])]),
            Err(DatasetError::DuplicateId(_))
        ));
        assert!(matches!(
            Dataset::new(vec![s("a", vec![1.0]), s("b", vec![2.0, 3.0])]),
            Err(DatasetError::DimensionMismatch { .. })
        ));
        let ds = Dataset::new(vec![s("a", vec![1.0, 2.0]), s("b", vec![3.0, 4.0])]).unwrap();
        assert_eq!(ds.dim(), 2);
        assert_eq!(ds.descriptor_matrix()[(1, 0)], 3.0);
    }

    fn quat() -> impl Strategy<Value = [f64; 4]> {
        prop::array::uniform4(-1.0f64..1.0).prop_filter("non-degenerate", |q| {
            q.iter().map(|v| v * v).sum::<f64>() > 1e-3
        })
    }

    proptest! {
        #[test]
        fn canonicalize_is_idempotent(q in quat(), t in prop::array::uniform3(-50.0f64..50.0)) {
            let p = PoseVector::new(q, t).unwrap();
            let again = PoseVector::new(p.quaternion(), p.translation()).unwrap();
            let norm: f64 = p.quaternion().iter().map(|v| v * v).sum::<f64>().sqrt();
            prop_assert!((norm - 1.0).abs() < 1e-6);
            prop_assert_eq!(p, again);
        }

        #[test]
        fn rotation_error_symmetric_and_sign_invariant(a in quat(), b in quat()) {
            let pa = PoseVector::new(a, [0.0; 3]).unwrap().quaternion();
            let pb = PoseVector::new(b, [0.0; 3]).unwrap().quaternion();
            let neg = pb.map(|v| -v);
            let e = rotation_error_deg(&pa, &pb);
            prop_assert!((0.0..=180.0).contains(&e));
            prop_assert!((e - rotation_error_deg(&pb, &pa)).abs() < 1e-9);
            prop_assert!((e - rotation_error_deg(&pa, &neg)).abs() < 1e-9);
            prop_assert!(rotation_error_deg(&pa, &pa) < 1e-5);
        }
    }
}
