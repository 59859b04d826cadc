#![allow(dead_code)]

use liftpose::core::skeleton::{center, rotation_matrix};
use liftpose::core::{GaussianPoseModel, Pose3D, SkeletonTopology};
use liftpose::core::preprocess::normalize_pose;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal<R: Rng>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

/// Standing 17-joint pose in meters, y up, facing +z.
pub fn rest_pose() -> Pose3D {
    #[rustfmt::skip]
    let joints = [
        [0.0, 0.95, 0.0],
        [-0.12, 0.93, 0.0], [-0.13, 0.52, 0.03], [-0.13, 0.08, 0.0],
        [0.12, 0.93, 0.0], [0.13, 0.52, 0.03], [0.13, 0.08, 0.0],
        [0.0, 1.18, -0.01], [0.0, 1.42, 0.0], [0.0, 1.52, 0.02], [0.0, 1.68, 0.04],
        [0.19, 1.40, 0.0], [0.24, 1.14, 0.04], [0.27, 0.90, 0.10],
        [-0.19, 1.40, 0.0], [-0.24, 1.14, 0.04], [-0.27, 0.90, 0.10],
    ];
    Pose3D::from_fn(17, |r, c| joints[c][r])
}

/// Centered, unit-normalized pose generator with `basis` orthonormal
/// deformation directions of spread `sigma[j]`.
pub struct Generator {
    pub mean: Pose3D,
    pub basis: DMatrix<f64>,
    pub sigma: Vec<f64>,
}

impl Generator {
    pub fn new(mean: &Pose3D, sigma: Vec<f64>, seed: u64) -> Self {
        let topo = SkeletonTopology::h36m17();
        let mean = normalize_pose(mean, &topo).unwrap();
        let mut rng = rng(seed);
        let l = mean.ncols();
        let mut raw = DMatrix::zeros(3 * l, sigma.len());
        for k in 0..sigma.len() {
            let p = center(&Pose3D::from_fn(l, |_, _| normal(&mut rng)));
            raw.set_column(k, &DVector::from_column_slice(p.as_slice()));
        }
        Self {
            mean,
            basis: raw.qr().q(),
            sigma,
        }
    }

    pub fn model(&self, noise_var: f64) -> GaussianPoseModel {
        GaussianPoseModel::new(self.mean.clone(), self.basis.clone(), self.sigma.clone(), noise_var).unwrap()
    }

    /// Aligned sample plus isotropic noise of standard deviation `noise`.
    pub fn sample<R: Rng>(&self, rng: &mut R, noise: f64) -> Pose3D {
        let a = DVector::from_iterator(self.sigma.len(), self.sigma.iter().map(|s| s * normal(rng)));
        let v = &self.basis * a;
        let l = self.mean.ncols();
        let mut p = &self.mean + Pose3D::from_column_slice(v.as_slice());
        p += Pose3D::from_fn(l, |_, _| noise * normal(rng));
        p
    }

    pub fn sample_rotated<R: Rng>(&self, rng: &mut R, noise: f64) -> Pose3D {
        let p = self.sample(rng, noise);
        rotation_matrix(rng.random_range(0.0..std::f64::consts::TAU)) * p
    }
}

/// Mocap-like poses in millimeters: random heading, translation and one of
/// `clusters` pose families.
pub fn mocap_poses(n: usize, clusters: usize, seed: u64) -> Vec<Pose3D> {
    let mut rng = rng(seed);
    let rest = rest_pose();
    let families: Vec<Generator> = (0..clusters)
        .map(|c| {
            let mut mean = rest.clone();
            // raise or bend the arms and knees differently per family
            let lift = 0.35 * c as f64;
            for j in [12, 13, 15, 16] {
                mean[(1, j)] += lift * if j % 3 == 1 { 1.0 } else { 0.6 };
            }
            for j in [2, 5] {
                mean[(2, j)] += 0.2 * c as f64;
            }
            Generator::new(&mean, vec![0.08, 0.05, 0.04, 0.03, 0.02, 0.015], seed + 100 + c as u64)
        })
        .collect();
    (0..n)
        .map(|i| {
            let g = &families[i % clusters];
            let mut p = g.sample_rotated(&mut rng, 0.002) * 1700.0;
            let t = nalgebra::Vector3::new(rng.random_range(-500.0..500.0), 0.0, rng.random_range(-500.0..500.0));
            for mut c in p.column_iter_mut() {
                c += t;
            }
            p
        })
        .collect()
}
