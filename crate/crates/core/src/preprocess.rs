//! Training-data normalization: unit skeleton size, centroid centering and
//! left/right mirror augmentation.

use alloc::vec::Vec;

use thiserror::Error;
#[allow(unused_imports)] // shadowed by inherent methods when std is linked
use num_traits::Float;

use crate::skeleton::{center, Pose3D, SkeletonTopology};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum PreprocessError {
    #[error("all limb lengths are zero (frame {frame:?})")]
    DegeneratePose { frame: Option<usize> },
    #[error("pose has {found} joints, topology has {expected}")]
    JointCount { expected: usize, found: usize },
    #[error("empty pose list")]
    Empty,
}

/// Sum of squared limb lengths.
pub fn squared_limb_sum(pose: &Pose3D, topology: &SkeletonTopology) -> f64 {
    topology
        .limbs()
        .iter()
        .map(|&(p, c)| (pose.column(c) - pose.column(p)).norm_squared())
        .sum()
}

/// Scales `pose` so its squared limb lengths sum to one and moves its
/// centroid to the origin.
pub fn normalize_pose(pose: &Pose3D, topology: &SkeletonTopology) -> Result<Pose3D, PreprocessError> {
    check_joints(pose, topology)?;
    let total = squared_limb_sum(pose, topology);
    if !(total > 0.0) || !total.is_finite() {
        return Err(PreprocessError::DegeneratePose { frame: None });
    }
    Ok(center(pose) / total.sqrt())
}

/// Reflects the pose through the x = 0 plane and swaps left/right joints.
pub fn mirror_pose(pose: &Pose3D, topology: &SkeletonTopology) -> Pose3D {
    let mut out = pose.clone();
    out.row_mut(0).neg_mut();
    for &(l, r) in topology.lr_pairs() {
        out.swap_columns(l, r);
    }
    out
}

/// Normalizes every pose; with `augment`, appends the mirrored copies after
/// the originals.
pub fn build_training_set(
    poses: &[Pose3D],
    topology: &SkeletonTopology,
    augment: bool,
) -> Result<Vec<Pose3D>, PreprocessError> {
    if poses.is_empty() {
        return Err(PreprocessError::Empty);
    }
    let mut out = Vec::with_capacity(if augment { 2 * poses.len() } else { poses.len() });
    for (i, pose) in poses.iter().enumerate() {
        out.push(normalize_pose(pose, topology).map_err(|e| match e {
            PreprocessError::DegeneratePose { .. } => PreprocessError::DegeneratePose { frame: Some(i) },
            other => other,
        })?);
    }
    if augment {
        for i in 0..poses.len() {
            let m = mirror_pose(&out[i], topology);
            out.push(m);
        }
    }
    Ok(out)
}

fn check_joints(pose: &Pose3D, topology: &SkeletonTopology) -> Result<(), PreprocessError> {
    if pose.ncols() != topology.num_joints() {
        return Err(PreprocessError::JointCount {
            expected: topology.num_joints(),
            found: pose.ncols(),
        });
    }
    Ok(())
}
