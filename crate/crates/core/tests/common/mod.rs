#![allow(dead_code)]

use liftpose_core::skeleton::center;
use liftpose_core::{GaussianPoseModel, Pose3D};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Centered random mean and centered orthonormal basis with decaying spread.
pub fn random_model(seed: u64, joints: usize, basis: usize) -> GaussianPoseModel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mean = center(&Pose3D::from_fn(joints, |_, _| rng.random_range(-0.5..0.5)));
    let mut raw = DMatrix::zeros(3 * joints, basis);
    for k in 0..basis {
        let p = center(&Pose3D::from_fn(joints, |_, _| rng.random_range(-1.0..1.0)));
        raw.set_column(k, &DVector::from_column_slice(p.as_slice()));
    }
    let sigma = (0..basis).map(|k| 0.2 / (k + 1) as f64).collect();
    GaussianPoseModel::new(mean, raw.qr().q(), sigma, 1e-3).unwrap()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
