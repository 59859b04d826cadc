//! Skeleton topology, pose matrices, ground-plane rotations and the
//! weak-perspective camera.

use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::TAU;

use nalgebra::{Matrix2x3, Matrix3, Matrix3xX, Matrix2xX};
use thiserror::Error;
#[allow(unused_imports)] // shadowed by inherent methods when std is linked
use num_traits::Float;

/// A 3×L matrix of joint positions, one column per joint, y pointing up.
pub type Pose3D = Matrix3xX<f64>;

/// A 2×L matrix of landmark positions, one column per landmark.
pub type Pose2D = Matrix2xX<f64>;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TopologyError {
    #[error("topology has no joints")]
    Empty,
    #[error("expected {expected} parent entries, found {found}")]
    LengthMismatch { expected: usize, found: usize },
    #[error("joint index {index} out of range")]
    IndexOutOfRange { index: usize },
    #[error("parent links of joint `{joint}` form a cycle")]
    Cycle { joint: String },
    #[error("joint `{joint}` is not connected to the root")]
    OrphanJoint { joint: String },
    #[error("joint `{joint}` appears more than once in the left/right pairs")]
    DuplicateLrPair { joint: String },
}

/// Joint names, tree structure and left/right correspondences of a skeleton.
#[derive(Debug, Clone, PartialEq)]
pub struct SkeletonTopology {
    joint_names: Vec<String>,
    parent: Vec<Option<usize>>,
    limbs: Vec<(usize, usize)>,
    lr_pairs: Vec<(usize, usize)>,
    root: usize,
}

impl SkeletonTopology {
    /// Builds and validates a topology. Limbs are derived from the parent
    /// links as `(parent, child)` pairs in child order.
    pub fn new(
        joint_names: Vec<String>,
        parent: Vec<Option<usize>>,
        lr_pairs: Vec<(usize, usize)>,
        root: usize,
    ) -> Result<Self, TopologyError> {
        let limbs = parent
            .iter()
            .enumerate()
            .filter_map(|(child, p)| p.map(|p| (p, child)))
            .collect();
        let topology = Self {
            joint_names,
            parent,
            limbs,
            lr_pairs,
            root,
        };
        topology.validate()?;
        Ok(topology)
    }

    /// The 17-joint Human3.6M skeleton.
    pub fn h36m17() -> Self {
        let names = [
            "hip", "r_hip", "r_knee", "r_foot", "l_hip", "l_knee", "l_foot", "spine", "thorax",
            "neck", "head", "l_shoulder", "l_elbow", "l_wrist", "r_shoulder", "r_elbow", "r_wrist",
        ];
        let parents = [
            None,
            Some(0),
            Some(1),
            Some(2),
            Some(0),
            Some(4),
            Some(5),
            Some(0),
            Some(7),
            Some(8),
            Some(9),
            Some(8),
            Some(11),
            Some(12),
            Some(8),
            Some(14),
            Some(15),
        ];
        let lr = vec![(4, 1), (5, 2), (6, 3), (11, 14), (12, 15), (13, 16)];
        Self::new(
            names.iter().map(|n| n.to_string()).collect(),
            parents.to_vec(),
            lr,
            0,
        )
        .expect("built-in topology is valid")
    }

    /// Joints used by the aligned-error protocols on the 17-joint skeleton:
    /// everything except the pelvis, spine and neck.
    pub fn h36m_eval_subset() -> Vec<usize> {
        vec![1, 2, 3, 4, 5, 6, 8, 10, 11, 12, 13, 14, 15, 16]
    }

    pub fn num_joints(&self) -> usize {
        self.joint_names.len()
    }

    pub fn joint_names(&self) -> &[String] {
        &self.joint_names
    }

    pub fn parent(&self, joint: usize) -> Option<usize> {
        self.parent[joint]
    }

    pub fn parents(&self) -> &[Option<usize>] {
        &self.parent
    }

    pub fn limbs(&self) -> &[(usize, usize)] {
        &self.limbs
    }

    pub fn lr_pairs(&self) -> &[(usize, usize)] {
        &self.lr_pairs
    }

    pub fn root(&self) -> usize {
        self.root
    }

    /// Checks the tree and pairing invariants.
    pub fn validate(&self) -> Result<(), TopologyError> {
        let n = self.joint_names.len();
        if n == 0 {
            return Err(TopologyError::Empty);
        }
        if self.parent.len() != n {
            return Err(TopologyError::LengthMismatch {
                expected: n,
                found: self.parent.len(),
            });
        }
        if self.root >= n {
            return Err(TopologyError::IndexOutOfRange { index: self.root });
        }
        let name = |j: usize| self.joint_names[j].clone();
        if let Some(p) = self.parent[self.root] {
            return Err(if p == self.root {
                TopologyError::Cycle {
                    joint: name(self.root),
                }
            } else {
                TopologyError::OrphanJoint {
                    joint: name(self.root),
                }
            });
        }
        for (joint, p) in self.parent.iter().enumerate() {
            match *p {
                Some(p) if p >= n => return Err(TopologyError::IndexOutOfRange { index: p }),
                Some(p) if p == joint => return Err(TopologyError::Cycle { joint: name(joint) }),
                None if joint != self.root => {
                    return Err(TopologyError::OrphanJoint { joint: name(joint) })
                }
                _ => {}
            }
        }
        // Walking towards the root must terminate within n steps.
        for start in 0..n {
            let mut cur = start;
            let mut steps = 0;
            while let Some(p) = self.parent[cur] {
                cur = p;
                steps += 1;
                if steps > n {
                    return Err(TopologyError::Cycle { joint: name(start) });
                }
            }
            if cur != self.root {
                return Err(TopologyError::OrphanJoint { joint: name(start) });
            }
        }
        let mut seen = vec![false; n];
        for &(l, r) in &self.lr_pairs {
            for j in [l, r] {
                if j >= n {
                    return Err(TopologyError::IndexOutOfRange { index: j });
                }
            }
            if l == r {
                return Err(TopologyError::DuplicateLrPair { joint: name(l) });
            }
            for j in [l, r] {
                if core::mem::replace(&mut seen[j], true) {
                    return Err(TopologyError::DuplicateLrPair { joint: name(j) });
                }
            }
        }
        debug_assert_eq!(self.limbs.len(), n - 1);
        Ok(())
    }
}

/// Rotation about the vertical (y) axis, angle kept in `[0, 2π)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlanarRotation {
    theta: f64,
}

impl PlanarRotation {
    pub fn new(theta: f64) -> Self {
        Self {
            theta: normalize_angle(theta),
        }
    }

    pub fn identity() -> Self {
        Self { theta: 0.0 }
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        rotation_matrix(self.theta)
    }

    pub fn compose(&self, other: &PlanarRotation) -> PlanarRotation {
        PlanarRotation::new(self.theta + other.theta)
    }

    pub fn inverse(&self) -> PlanarRotation {
        PlanarRotation::new(-self.theta)
    }

    /// Rotates every column of `pose`.
    pub fn apply(&self, pose: &Pose3D) -> Pose3D {
        rotate_pose(self.theta, pose)
    }
}

/// Wraps an angle into `[0, 2π)`.
pub fn normalize_angle(theta: f64) -> f64 {
    let mut r = theta % TAU;
    if r < 0.0 {
        r += TAU;
    }
    if r >= TAU {
        0.0
    } else {
        r
    }
}

/// Shortest angular distance between two angles, in `[0, π]`.
pub fn angle_distance(a: f64, b: f64) -> f64 {
    let d = normalize_angle(a - b);
    d.min(TAU - d)
}

/// The ground-plane rotation `[[c,0,s],[0,1,0],[-s,0,c]]`.
pub fn rotation_matrix(theta: f64) -> Matrix3<f64> {
    let (s, c) = theta.sin_cos();
    Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c)
}

pub(crate) fn rotate_pose(theta: f64, pose: &Pose3D) -> Pose3D {
    let (s, c) = theta.sin_cos();
    let mut out = pose.clone();
    for mut col in out.column_iter_mut() {
        let (x, z) = (col[0], col[2]);
        col[0] = c * x + s * z;
        col[2] = -s * x + c * z;
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Error)]
#[error("external calibration is not orthonormal (deviation {deviation:e})")]
pub struct CameraError {
    pub deviation: f64,
}

/// Weak-perspective camera: `s · Π · E`, with `Π` keeping the first two rows.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraModel {
    external: Matrix3<f64>,
}

impl CameraModel {
    pub fn new(external: Matrix3<f64>) -> Result<Self, CameraError> {
        let deviation = (external.transpose() * external - Matrix3::identity()).amax();
        if !(deviation <= 1e-10) {
            return Err(CameraError { deviation });
        }
        Ok(Self { external })
    }

    pub fn identity() -> Self {
        Self {
            external: Matrix3::identity(),
        }
    }

    /// Camera whose image rows grow downwards: a half turn about the x-axis,
    /// so a y-up pose appears upright in pixel coordinates.
    pub fn image() -> Self {
        Self {
            external: Matrix3::from_diagonal(&nalgebra::Vector3::new(1.0, -1.0, -1.0)),
        }
    }

    pub fn external(&self) -> &Matrix3<f64> {
        &self.external
    }

    pub fn projector() -> Matrix2x3<f64> {
        Matrix2x3::new(1.0, 0.0, 0.0, 0.0, 1.0, 0.0)
    }

    /// `Π · E` as a single 2×3 matrix.
    pub fn projection(&self) -> Matrix2x3<f64> {
        Self::projector() * self.external
    }

    /// `s · Π · E · pose`.
    pub fn project(&self, pose: &Pose3D, scale: f64) -> Pose2D {
        self.projection() * pose * scale
    }
}

/// Column mean of a pose matrix.
pub fn centroid<const R: usize>(
    pose: &nalgebra::OMatrix<f64, nalgebra::Const<R>, nalgebra::Dyn>,
) -> nalgebra::SVector<f64, R> {
    let n = pose.ncols().max(1) as f64;
    pose.column_sum() / n
}

/// Subtracts the column mean from every column.
pub fn center<const R: usize>(
    pose: &nalgebra::OMatrix<f64, nalgebra::Const<R>, nalgebra::Dyn>,
) -> nalgebra::OMatrix<f64, nalgebra::Const<R>, nalgebra::Dyn> {
    let c = centroid(pose);
    let mut out = pose.clone();
    for mut col in out.column_iter_mut() {
        col -= &c;
    }
    out
}

pub fn is_finite<R: nalgebra::Dim, C: nalgebra::Dim, S: nalgebra::RawStorage<f64, R, C>>(
    m: &nalgebra::Matrix<f64, R, C, S>,
) -> bool {
    m.iter().all(|v| v.is_finite())
}

#[cfg(test)]
mod tests {
    use super::*;
    use core::f64::consts::PI;
    use nalgebra::Vector3;

    fn names(n: usize) -> Vec<String> {
        (0..n).map(|i| alloc::format!("j{i}")).collect()
    }

    #[test]
    fn rotation_at_zero_is_identity() {
        assert_eq!(rotation_matrix(0.0), Matrix3::identity());
    }

    #[test]
    fn half_turn_negates_x_and_z() {
        let v = rotation_matrix(PI) * Vector3::new(1.0, 2.0, 3.0);
        assert!((v - Vector3::new(-1.0, 2.0, -3.0)).amax() < 1e-12);
    }

    #[test]
    fn rotation_matches_scalar_expansion() {
        let t: f64 = 0.3;
        let v = rotation_matrix(t) * Vector3::new(1.0, 2.0, 3.0);
        let expect = Vector3::new(
            t.cos() * 1.0 + t.sin() * 3.0,
            2.0,
            -t.sin() * 1.0 + t.cos() * 3.0,
        );
        assert!((v - expect).amax() < 1e-15);
    }

    #[test]
    fn rotations_compose_and_are_orthonormal() {
        for (a, b) in [(0.4, 1.1), (5.0, 3.0), (-2.0, 0.7)] {
            let ab = rotation_matrix(a) * rotation_matrix(b);
            assert!((ab - rotation_matrix(normalize_angle(a + b))).amax() < 1e-12);
            let r = rotation_matrix(a);
            assert!((r.transpose() * r - Matrix3::identity()).amax() < 1e-12);
            assert!((r.determinant() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn angles_are_normalized() {
        assert_eq!(PlanarRotation::new(0.0).theta(), 0.0);
        assert!((PlanarRotation::new(-0.5).theta() - (TAU - 0.5)).abs() < 1e-15);
        assert!((PlanarRotation::new(7.0).theta() - (7.0 - TAU)).abs() < 1e-15);
        assert!(PlanarRotation::new(TAU).theta() < TAU);
        assert!(angle_distance(0.1, TAU - 0.1) < 0.2 + 1e-12);
    }

    #[test]
    fn seventeen_joint_chain_is_valid() {
        let parents = (0..17).map(|i| if i == 0 { None } else { Some(i - 1) }).collect();
        let t = SkeletonTopology::new(names(17), parents, vec![(1, 2)], 0).unwrap();
        assert_eq!(t.limbs().len(), 16);
        let h = SkeletonTopology::h36m17();
        assert_eq!(h.num_joints(), 17);
        assert_eq!(SkeletonTopology::h36m_eval_subset().len(), 14);
    }

    #[test]
    fn self_loop_is_a_cycle() {
        let mut parents: Vec<_> = (0..5).map(|i| if i == 0 { None } else { Some(i - 1) }).collect();
        parents[3] = Some(3);
        let err = SkeletonTopology::new(names(5), parents, vec![], 0).unwrap_err();
        assert_eq!(err, TopologyError::Cycle { joint: "j3".into() });
    }

    #[test]
    fn longer_cycle_is_detected() {
        let parents = vec![None, Some(2), Some(1)];
        let err = SkeletonTopology::new(names(3), parents, vec![], 0).unwrap_err();
        assert!(matches!(err, TopologyError::Cycle { .. }));
    }

    #[test]
    fn second_root_is_an_orphan() {
        let parents = vec![None, Some(0), None];
        let err = SkeletonTopology::new(names(3), parents, vec![], 0).unwrap_err();
        assert_eq!(err, TopologyError::OrphanJoint { joint: "j2".into() });
    }

    #[test]
    fn degenerate_lr_pairs_are_rejected() {
        let parents = vec![None, Some(0), Some(0)];
        let err = SkeletonTopology::new(names(3), parents.clone(), vec![(2, 2)], 0).unwrap_err();
        assert_eq!(err, TopologyError::DuplicateLrPair { joint: "j2".into() });
        let err =
            SkeletonTopology::new(names(3), parents, vec![(1, 2), (0, 1)], 0).unwrap_err();
        assert_eq!(err, TopologyError::DuplicateLrPair { joint: "j1".into() });
    }

    #[test]
    fn identity_camera_projects_xy_rows() {
        let pose = Pose3D::from_fn(5, |r, c| (r * 5 + c) as f64 * 0.1 - 0.4);
        let p = CameraModel::identity().project(&PlanarRotation::identity().apply(&pose), 1.0);
        assert_eq!(p.row(0), pose.row(0));
        assert_eq!(p.row(1), pose.row(1));
    }

    #[test]
    fn camera_rejects_non_orthonormal() {
        assert!(CameraModel::new(Matrix3::identity() * 1.01).is_err());
        assert!(CameraModel::new(rotation_matrix(0.3)).is_ok());
    }
}
