//! 3D pose error metrics: raw per-joint error and similarity-aligned error.

use alloc::vec::Vec;

use nalgebra::{Matrix3, Vector3};
#[allow(unused_imports)] // shadowed by inherent methods when std is linked
use num_traits::Float;
use thiserror::Error;

use crate::align::update_rotation;
use crate::skeleton::{center, centroid, Pose2D, Pose3D};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricsError {
    #[error("joint count mismatch: {expected} vs {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("collinear or coincident joints cannot be aligned")]
    DegenerateConfiguration,
    #[error("joint index {index} out of range for {joints} joints")]
    IndexOutOfRange { index: usize, joints: usize },
    #[error("empty joint subset")]
    EmptySubset,
}

fn check(a: usize, b: usize) -> Result<(), MetricsError> {
    if a != b {
        return Err(MetricsError::DimensionMismatch { expected: a, found: b });
    }
    if a == 0 {
        return Err(MetricsError::EmptySubset);
    }
    Ok(())
}

/// Mean per-joint Euclidean distance, no alignment.
pub fn mpjpe(pred: &Pose3D, gt: &Pose3D) -> Result<f64, MetricsError> {
    check(gt.ncols(), pred.ncols())?;
    Ok(mean_distance(pred, gt))
}

fn mean_distance(a: &Pose3D, b: &Pose3D) -> f64 {
    a.column_iter().zip(b.column_iter()).map(|(p, q)| (p - q).norm()).sum::<f64>() / a.ncols() as f64
}

/// Mean per-landmark pixel distance.
pub fn mean_error_2d(pred: &Pose2D, gt: &Pose2D) -> Result<f64, MetricsError> {
    check(gt.ncols(), pred.ncols())?;
    Ok(pred.column_iter().zip(gt.column_iter()).map(|(p, q)| (p - q).norm()).sum::<f64>() / pred.ncols() as f64)
}

/// Similarity transform taking `pred` onto `gt`: `scale·rotation·pred + translation`.
#[derive(Debug, Clone, PartialEq)]
pub struct Procrustes {
    pub aligned: Pose3D,
    pub scale: f64,
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
    /// `Σ‖aligned_j − gt_j‖²`.
    pub residual: f64,
}

/// Least-squares similarity alignment of `pred` to `gt` with a proper
/// rotation.
pub fn procrustes_align(pred: &Pose3D, gt: &Pose3D) -> Result<Procrustes, MetricsError> {
    check(gt.ncols(), pred.ncols())?;
    let n = pred.ncols() as f64;
    let (mp, mg) = (centroid(pred), centroid(gt));
    let (p, g) = (center(pred), center(gt));
    let var_p = p.norm_squared() / n;
    let sv = (&p * p.transpose()).symmetric_eigenvalues();
    let mut sv: Vec<f64> = sv.iter().copied().collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    if !(var_p > 0.0) || sv[1] <= 1e-12 * sv[0] {
        return Err(MetricsError::DegenerateConfiguration);
    }
    let cov = &g * p.transpose() / n;
    let svd = cov.svd(true, true);
    let (u, v_t) = (svd.u.unwrap(), svd.v_t.unwrap());
    let mut d = Vector3::new(1.0, 1.0, 1.0);
    if (u.determinant() * v_t.determinant()) < 0.0 {
        let k = (0..3).min_by(|a, b| svd.singular_values[*a].total_cmp(&svd.singular_values[*b])).unwrap();
        d[k] = -1.0;
    }
    let rotation = u * Matrix3::from_diagonal(&d) * v_t;
    let scale = svd.singular_values.dot(&d) / var_p;
    if !(scale > 0.0) {
        return Err(MetricsError::DegenerateConfiguration);
    }
    let translation = mg - scale * rotation * mp;
    let mut aligned = rotation * pred * scale;
    for mut c in aligned.column_iter_mut() {
        c += translation;
    }
    let residual = (&aligned - gt).norm_squared();
    Ok(Procrustes {
        aligned,
        scale,
        rotation,
        translation,
        residual,
    })
}

fn select(pose: &Pose3D, subset: &[usize]) -> Result<Pose3D, MetricsError> {
    if subset.is_empty() {
        return Err(MetricsError::EmptySubset);
    }
    if let Some(&index) = subset.iter().find(|&&i| i >= pose.ncols()) {
        return Err(MetricsError::IndexOutOfRange {
            index,
            joints: pose.ncols(),
        });
    }
    Ok(pose.select_columns(subset))
}

/// Mean per-joint distance over `subset` after similarity alignment on the
/// same subset.
pub fn pose_error_aligned(pred: &Pose3D, gt: &Pose3D, subset: &[usize]) -> Result<f64, MetricsError> {
    check(gt.ncols(), pred.ncols())?;
    let (p, g) = (select(pred, subset)?, select(gt, subset)?);
    let fit = procrustes_align(&p, &g)?;
    Ok(mean_distance(&fit.aligned, &g))
}

/// Mean per-joint distance after optimal translation, rotation about the
/// vertical axis and nonnegative uniform scale.
pub fn planar_aligned_error(pred: &Pose3D, gt: &Pose3D) -> Result<f64, MetricsError> {
    check(gt.ncols(), pred.ncols())?;
    let (p, g) = (center(pred), center(gt));
    let rotated = update_rotation(&g, &p).apply(&p);
    let pp = rotated.norm_squared();
    let scale = if pp > 0.0 { (rotated.dot(&g) / pp).max(0.0) } else { 0.0 };
    Ok(mean_distance(&(rotated * scale), &g))
}
