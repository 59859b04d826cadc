//! Single-Gaussian pose model trained jointly with per-sample ground-plane
//! rotations.
//!
//! Training alternates closed-form probabilistic PCA on the de-rotated poses
//! with a closed-form planar Procrustes update of each sample's rotation,
//! growing the basis one direction at a time. In the default
//! [`PriorForm::GaussianPrior`] mode the tracked objective is twice the
//! negative log-likelihood of the PPCA model with the latent coefficients made
//! explicit,
//!
//! ```text
//! Σ_i ‖P_i − R_i(μ + a_i·e)‖² / v + Σ_j a_ij² / σ_j²  +  ln|σ² ⊕ v|
//! ```
//!
//! so every half-step of the alternation is a block minimization and the
//! objective cannot increase at a fixed basis size.

use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector, Dyn, Matrix2, OMatrix, U2};
use thiserror::Error;
#[allow(unused_imports)] // shadowed by inherent methods when std is linked
use num_traits::Float;

use crate::linalg::{polar2, sorted_symmetric_eigen};
use crate::skeleton::{normalize_angle, rotate_pose, PlanarRotation, Pose3D};

const ORTHONORMAL_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AlignError {
    #[error("need more than {basis} samples for a basis of size {basis}, got {samples}")]
    InsufficientData { samples: usize, basis: usize },
    #[error("basis size {basis} must be in 1..{dim}")]
    InvalidBasisSize { basis: usize, dim: usize },
    #[error("interleaved x/z matrix is rank deficient (σ2/σ1 = {ratio:e})")]
    RankDeficient { ratio: f64 },
    #[error("poses have inconsistent joint counts")]
    JointCount,
}

/// A violated [`GaussianPoseModel`] invariant.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("basis has {rows} rows, expected {expected}")]
    Shape { rows: usize, expected: usize },
    #[error("basis is not orthonormal (max deviation {deviation:e})")]
    NonOrthonormalBasis { deviation: f64 },
    #[error("sigma has {found} entries for {expected} basis directions")]
    SigmaLength { expected: usize, found: usize },
    #[error("sigma is not positive and non-increasing")]
    SigmaOrder,
    #[error("noise variance must be positive and finite")]
    NoiseVariance,
    #[error("mean pose centroid is not zero (norm {norm:e})")]
    MeanNotCentered { norm: f64 },
    #[error("model contains non-finite values")]
    NonFinite,
}

/// Which quadratic penalty on the basis coefficients is used.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PriorForm {
    /// `Σ (a_j / σ_j)²`, the Gaussian log-prior of PPCA.
    #[default]
    GaussianPrior,
    /// `Σ (a_j · σ_j)²` with an unweighted data term.
    LiteralPaper,
}

/// Mean pose, orthonormal deformation basis, per-direction standard
/// deviations and isotropic residual variance.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianPoseModel {
    mean: Pose3D,
    basis: DMatrix<f64>,
    sigma: Vec<f64>,
    noise_var: f64,
}

impl GaussianPoseModel {
    /// `basis` holds one unwrapped (column-major) pose per column. Checks
    /// everything except mean centering, see [`Self::check_centered`].
    pub fn new(
        mean: Pose3D,
        basis: DMatrix<f64>,
        sigma: Vec<f64>,
        noise_var: f64,
    ) -> Result<Self, ModelError> {
        let dim = 3 * mean.ncols();
        if basis.nrows() != dim {
            return Err(ModelError::Shape {
                rows: basis.nrows(),
                expected: dim,
            });
        }
        if sigma.len() != basis.ncols() {
            return Err(ModelError::SigmaLength {
                expected: basis.ncols(),
                found: sigma.len(),
            });
        }
        if !mean.iter().chain(basis.iter()).chain(sigma.iter()).all(|v| v.is_finite()) {
            return Err(ModelError::NonFinite);
        }
        if !(noise_var > 0.0 && noise_var.is_finite()) {
            return Err(ModelError::NoiseVariance);
        }
        if sigma.iter().any(|&s| !(s > 0.0)) || sigma.windows(2).any(|w| w[1] > w[0]) {
            return Err(ModelError::SigmaOrder);
        }
        let deviation = orthonormality_deviation(&basis);
        if deviation > ORTHONORMAL_TOL {
            return Err(ModelError::NonOrthonormalBasis { deviation });
        }
        Ok(Self {
            mean,
            basis,
            sigma,
            noise_var,
        })
    }

    /// Fails unless the mean pose has (numerically) zero centroid.
    pub fn check_centered(&self) -> Result<(), ModelError> {
        let norm = (self.mean.column_sum() / self.mean.ncols() as f64).norm();
        if norm > 1e-9 * (1.0 + self.mean.norm()) {
            return Err(ModelError::MeanNotCentered { norm });
        }
        Ok(())
    }

    pub fn mean(&self) -> &Pose3D {
        &self.mean
    }

    /// Unwrapped basis, `3L × J`.
    pub fn basis(&self) -> &DMatrix<f64> {
        &self.basis
    }

    /// Basis direction `j` as a 3×L pose matrix.
    pub fn basis_pose(&self, j: usize) -> Pose3D {
        Pose3D::from_column_slice(self.basis.column(j).as_slice())
    }

    pub fn sigma(&self) -> &[f64] {
        &self.sigma
    }

    pub fn noise_var(&self) -> f64 {
        self.noise_var
    }

    pub fn num_joints(&self) -> usize {
        self.mean.ncols()
    }

    pub fn basis_size(&self) -> usize {
        self.basis.ncols()
    }

    pub fn dim(&self) -> usize {
        self.basis.nrows()
    }

    /// `μ + a·e`.
    pub fn reconstruct(&self, coeffs: &[f64]) -> Pose3D {
        let mut out = self.mean.clone();
        for (j, &a) in coeffs.iter().enumerate() {
            for (o, &e) in out.iter_mut().zip(self.basis.column(j).iter()) {
                *o += a * e;
            }
        }
        out
    }

    /// Optimal coefficients for an already de-rotated pose under `prior`.
    pub fn coefficients(&self, aligned: &Pose3D, prior: PriorForm) -> Vec<f64> {
        let r = DVector::from_column_slice((aligned - &self.mean).as_slice());
        let proj = self.basis.tr_mul(&r);
        (0..self.basis_size())
            .map(|j| proj[j] * self.shrinkage(j, prior))
            .collect()
    }

    fn shrinkage(&self, j: usize, prior: PriorForm) -> f64 {
        let var = self.sigma[j] * self.sigma[j];
        match prior {
            PriorForm::GaussianPrior => var / (var + self.noise_var),
            PriorForm::LiteralPaper => 1.0 / (1.0 + var),
        }
    }

    /// Penalty-independent model term of the objective.
    pub fn log_term(&self, prior: PriorForm) -> f64 {
        match prior {
            PriorForm::GaussianPrior => {
                let d = self.dim() as f64;
                let j = self.basis_size() as f64;
                self.sigma
                    .iter()
                    .map(|s| (s * s + self.noise_var).ln())
                    .sum::<f64>()
                    + (d - j) * self.noise_var.ln()
            }
            PriorForm::LiteralPaper => {
                let total: f64 = self.sigma.iter().map(|s| s * s).sum();
                if total > 0.0 {
                    total.ln()
                } else {
                    0.0
                }
            }
        }
    }

    /// Objective contribution of one sample.
    pub fn sample_objective(
        &self,
        pose: &Pose3D,
        rotation: PlanarRotation,
        coeffs: &[f64],
        prior: PriorForm,
    ) -> f64 {
        let residual = (pose - rotation.apply(&self.reconstruct(coeffs))).norm_squared();
        let penalty: f64 = coeffs
            .iter()
            .zip(&self.sigma)
            .map(|(a, s)| match prior {
                PriorForm::GaussianPrior => (a / s) * (a / s),
                PriorForm::LiteralPaper => (a * s) * (a * s),
            })
            .sum();
        match prior {
            PriorForm::GaussianPrior => residual / self.noise_var + penalty + self.log_term(prior),
            PriorForm::LiteralPaper => residual + penalty + self.log_term(prior),
        }
    }

    /// Gaussian log-density of an (aligned) pose under covariance
    /// `e·diag(σ²)·eᵀ + v·I`, using the low-rank inverse identity.
    pub fn log_density(&self, pose: &Pose3D) -> f64 {
        let r = DVector::from_column_slice((pose - &self.mean).as_slice());
        let proj = self.basis.tr_mul(&r);
        let mut quad = r.norm_squared();
        for (j, p) in proj.iter().enumerate() {
            let var = self.sigma[j] * self.sigma[j];
            quad -= var / (var + self.noise_var) * p * p;
        }
        quad /= self.noise_var;
        let d = self.dim() as f64;
        -0.5 * (d * (2.0 * core::f64::consts::PI).ln() + self.log_term(PriorForm::GaussianPrior) + quad)
    }
}

fn orthonormality_deviation(basis: &DMatrix<f64>) -> f64 {
    let gram = basis.tr_mul(basis);
    let mut worst: f64 = 0.0;
    for i in 0..gram.nrows() {
        for j in 0..gram.ncols() {
            let target = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((gram[(i, j)] - target).abs());
        }
    }
    worst
}

/// Per-sample rotations, coefficients and the objective they achieve.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignmentState {
    pub rotations: Vec<PlanarRotation>,
    /// `N × J` coefficient matrix.
    pub coefficients: DMatrix<f64>,
    pub objective: f64,
}

/// Basis growth and stopping rule for [`train_aligned_model`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GrowthSchedule {
    /// Alternation rounds spent at each intermediate basis size.
    pub rounds_per_step: usize,
    /// Cap on rounds at the target basis size.
    pub max_rounds: usize,
    /// Relative objective change below which training stops.
    pub tol: f64,
}

impl Default for GrowthSchedule {
    fn default() -> Self {
        Self {
            rounds_per_step: 3,
            max_rounds: 200,
            tol: 1e-6,
        }
    }
}

/// One alternation round.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoundRecord {
    pub basis_size: usize,
    pub objective: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    /// Objective of the initial rotations with a PPCA fit at the starting
    /// basis size.
    pub initial_objective: f64,
    pub rounds: Vec<RoundRecord>,
    /// False when the round cap was hit before the tolerance was met.
    pub converged: bool,
}

/// Mean pose estimate from unaligned poses.
///
/// The y-row is the per-joint mean height. The x and z rows of every sample
/// are interleaved into a `2N × L` matrix, factored at rank two, every 2×2
/// block of the left factor is replaced by its closest orthonormal matrix and
/// the mean is read off the pseudo-inverse solve. The gauge is fixed so the
/// blocks average to the identity.
pub fn init_mean_tk(poses: &[Pose3D]) -> Result<Pose3D, AlignError> {
    let n = poses.len();
    if n < 2 {
        return Err(AlignError::InsufficientData { samples: n, basis: 1 });
    }
    let l = poses[0].ncols();
    if poses.iter().any(|p| p.ncols() != l) {
        return Err(AlignError::JointCount);
    }
    let mut m = DMatrix::<f64>::zeros(2 * n, l);
    for (i, p) in poses.iter().enumerate() {
        m.row_mut(2 * i).copy_from(&p.row(0));
        m.row_mut(2 * i + 1).copy_from(&p.row(2));
    }
    let svd = m.clone().svd(true, false);
    let u = svd.u.expect("left singular vectors requested");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    if order.len() < 2 {
        return Err(AlignError::RankDeficient { ratio: 0.0 });
    }
    let (s1, s2) = (svd.singular_values[order[0]], svd.singular_values[order[1]]);
    if !(s2 >= 1e-12 * s1) || s1 == 0.0 {
        return Err(AlignError::RankDeficient {
            ratio: if s1 > 0.0 { s2 / s1 } else { 0.0 },
        });
    }
    let root_n = (n as f64).sqrt();
    let mut a = OMatrix::<f64, Dyn, U2>::zeros(2 * n);
    a.set_column(0, &(u.column(order[0]) * root_n));
    a.set_column(1, &(u.column(order[1]) * root_n));

    let block = |a: &OMatrix<f64, Dyn, U2>, i: usize| -> Matrix2<f64> {
        Matrix2::new(a[(2 * i, 0)], a[(2 * i, 1)], a[(2 * i + 1, 0)], a[(2 * i + 1, 1)])
    };
    // Ground-plane rotations act as proper rotations on (x, z): undo a
    // reflection absorbed by the factorization.
    let det_sum: f64 = (0..n).map(|i| block(&a, i).determinant()).sum();
    if det_sum < 0.0 {
        a.column_mut(1).neg_mut();
    }
    let mut blocks: Vec<Matrix2<f64>> = (0..n).map(|i| polar2(&block(&a, i))).collect();
    let gauge = polar2(&blocks.iter().sum::<Matrix2<f64>>());
    for b in &mut blocks {
        *b *= gauge.transpose();
    }
    // Â† M = (ÂᵀÂ)⁻¹ Âᵀ M, accumulated block by block.
    let mut ata = Matrix2::<f64>::zeros();
    let mut atm = nalgebra::Matrix2xX::<f64>::zeros(l);
    for (i, b) in blocks.iter().enumerate() {
        ata += b.transpose() * b;
        let rows = nalgebra::Matrix2xX::from_rows(&[m.row(2 * i).into_owned(), m.row(2 * i + 1).into_owned()]);
        atm += b.transpose() * rows;
    }
    let xz = ata
        .try_inverse()
        .ok_or(AlignError::RankDeficient { ratio: 0.0 })?
        * atm;
    let mut mean = Pose3D::zeros(l);
    mean.row_mut(0).copy_from(&xz.row(0));
    mean.row_mut(2).copy_from(&xz.row(1));
    for j in 0..l {
        mean[(1, j)] = poses.iter().map(|p| p[(1, j)]).sum::<f64>() / n as f64;
    }
    Ok(mean)
}

/// Ground-plane rotation minimizing `‖pose − R(θ)·reconstruction‖²`.
///
/// Closed-form 2D Procrustes on the (x, z) rows. Returns 0 when every angle
/// is optimal.
pub fn update_rotation(pose: &Pose3D, reconstruction: &Pose3D) -> PlanarRotation {
    let (mut cos_term, mut sin_term) = (0.0, 0.0);
    let (mut pn, mut xn) = (0.0, 0.0);
    for (p, x) in pose.column_iter().zip(reconstruction.column_iter()) {
        cos_term += p[0] * x[0] + p[2] * x[2];
        sin_term += p[0] * x[2] - p[2] * x[0];
        pn += p[0] * p[0] + p[2] * p[2];
        xn += x[0] * x[0] + x[2] * x[2];
    }
    if cos_term.hypot(sin_term) <= 1e-14 * (pn * xn).sqrt() || (pn * xn) == 0.0 {
        return PlanarRotation::identity();
    }
    let theta = sin_term.atan2(cos_term);
    // Values within rounding of 2π are the identity.
    if normalize_angle(theta) > core::f64::consts::TAU - 1e-15 {
        return PlanarRotation::identity();
    }
    PlanarRotation::new(theta)
}

/// Maximum-likelihood probabilistic PCA with `j` basis directions.
///
/// Eigen-decomposes the (1/N) sample covariance of the unwrapped poses. The
/// residual variance is the mean of the discarded eigenvalues and
/// `σ_j² = λ_j − v`, both floored at a tiny positive value.
pub fn ppca_closed_form(poses: &[Pose3D], j: usize) -> Result<GaussianPoseModel, AlignError> {
    let weights = vec![1.0; poses.len()];
    ppca_weighted(poses, &weights, j)
}

pub(crate) fn ppca_weighted(
    poses: &[Pose3D],
    weights: &[f64],
    j: usize,
) -> Result<GaussianPoseModel, AlignError> {
    let n = poses.len();
    if n <= j {
        return Err(AlignError::InsufficientData { samples: n, basis: j });
    }
    let l = poses[0].ncols();
    if poses.iter().any(|p| p.ncols() != l) {
        return Err(AlignError::JointCount);
    }
    let dim = 3 * l;
    if j == 0 || j >= dim {
        return Err(AlignError::InvalidBasisSize { basis: j, dim });
    }
    let total: f64 = weights.iter().sum();
    let mut mean = DVector::<f64>::zeros(dim);
    for (p, &w) in poses.iter().zip(weights) {
        mean.axpy(w / total, &DVector::from_column_slice(p.as_slice()), 1.0);
    }
    let mut centered = DMatrix::<f64>::zeros(dim, n);
    for (i, (p, &w)) in poses.iter().zip(weights).enumerate() {
        let scale = (w / total).sqrt();
        for (k, v) in p.iter().enumerate() {
            centered[(k, i)] = (v - mean[k]) * scale;
        }
    }
    let cov = &centered * centered.transpose();
    let (values, vectors) = sorted_symmetric_eigen(cov);
    let floor = 1e-12 * values[0].abs().max(f64::MIN_POSITIVE) + f64::MIN_POSITIVE;
    let noise_var = (values.rows(j, dim - j).sum() / (dim - j) as f64).max(floor);
    let sigma: Vec<f64> = (0..j)
        .map(|k| (values[k] - noise_var).max(floor).sqrt())
        .collect();
    let basis = vectors.columns(0, j).into_owned();
    let mean = Pose3D::from_column_slice(mean.as_slice());
    Ok(GaussianPoseModel::new(mean, basis, sigma, noise_var)
        .expect("eigenvectors of a symmetric matrix are orthonormal"))
}

/// Trains a rotation-aligned PPCA model with `j_target` basis directions.
///
/// Each round fits PPCA to the de-rotated poses, recomputes the coefficients
/// and then re-solves every rotation against its reconstruction. The basis
/// grows by one direction every `rounds_per_step` rounds.
pub fn train_aligned_model(
    poses: &[Pose3D],
    j_target: usize,
    schedule: &GrowthSchedule,
    prior: PriorForm,
) -> Result<(GaussianPoseModel, AlignmentState, TrainReport), AlignError> {
    if j_target == 0 {
        return Err(AlignError::InvalidBasisSize {
            basis: 0,
            dim: poses.first().map_or(0, |p| 3 * p.ncols()),
        });
    }
    if poses.len() <= j_target {
        return Err(AlignError::InsufficientData {
            samples: poses.len(),
            basis: j_target,
        });
    }
    let init = init_mean_tk(poses)?;
    let mut rotations: Vec<PlanarRotation> =
        poses.iter().map(|p| update_rotation(p, &init)).collect();

    let mut size = 1.min(j_target);
    let initial_objective = {
        let aligned = derotate(poses, &rotations);
        let model = ppca_closed_form(&aligned, size)?;
        let coeffs: Vec<Vec<f64>> = aligned.iter().map(|q| model.coefficients(q, prior)).collect();
        total_objective(&model, poses, &rotations, &coeffs, prior)
    };

    let mut at_size = 0;
    let mut previous: Option<f64> = None;
    let mut rounds = Vec::new();
    let mut converged = false;
    let rounds_per_step = schedule.rounds_per_step.max(1);
    loop {
        let aligned = derotate(poses, &rotations);
        let model = ppca_closed_form(&aligned, size)?;
        let coeffs: Vec<Vec<f64>> = aligned.iter().map(|q| model.coefficients(q, prior)).collect();
        for (i, pose) in poses.iter().enumerate() {
            rotations[i] = update_rotation(pose, &model.reconstruct(&coeffs[i]));
        }
        let objective = total_objective(&model, poses, &rotations, &coeffs, prior);
        rounds.push(RoundRecord {
            basis_size: size,
            objective,
        });
        at_size += 1;

        if size < j_target {
            if at_size >= rounds_per_step {
                size += 1;
                at_size = 0;
            }
            continue;
        }
        let done = match previous {
            Some(prev) => (prev - objective).abs() <= schedule.tol * prev.abs().max(f64::MIN_POSITIVE),
            None => false,
        };
        previous = Some(objective);
        if done {
            converged = true;
        }
        if done || at_size >= schedule.max_rounds.max(1) {
            let mut coefficients = DMatrix::zeros(poses.len(), size);
            for (i, c) in coeffs.iter().enumerate() {
                for (k, v) in c.iter().enumerate() {
                    coefficients[(i, k)] = *v;
                }
            }
            let state = AlignmentState {
                rotations,
                coefficients,
                objective,
            };
            let report = TrainReport {
                initial_objective,
                rounds,
                converged,
            };
            return Ok((model, state, report));
        }
    }
}

/// Best rotation and coefficients for a pose under a trained model: a coarse
/// angle scan followed by alternating rotation/coefficient updates.
pub fn fit_pose(model: &GaussianPoseModel, pose: &Pose3D, prior: PriorForm) -> (PlanarRotation, Vec<f64>) {
    const SCAN: usize = 72;
    let mut best = (f64::INFINITY, PlanarRotation::identity(), Vec::new());
    for k in 0..SCAN {
        let rot = PlanarRotation::new(core::f64::consts::TAU * k as f64 / SCAN as f64);
        let coeffs = model.coefficients(&rot.inverse().apply(pose), prior);
        let obj = model.sample_objective(pose, rot, &coeffs, prior);
        if obj < best.0 {
            best = (obj, rot, coeffs);
        }
    }
    let (mut obj, mut rot, mut coeffs) = best;
    for _ in 0..100 {
        let next_rot = update_rotation(pose, &model.reconstruct(&coeffs));
        let next_coeffs = model.coefficients(&next_rot.inverse().apply(pose), prior);
        let next_obj = model.sample_objective(pose, next_rot, &next_coeffs, prior);
        if !(next_obj < obj) {
            break;
        }
        let gain = obj - next_obj;
        (obj, rot, coeffs) = (next_obj, next_rot, next_coeffs);
        if gain <= 1e-13 * obj.abs().max(1.0) {
            break;
        }
    }
    (rot, coeffs)
}

fn derotate(poses: &[Pose3D], rotations: &[PlanarRotation]) -> Vec<Pose3D> {
    poses
        .iter()
        .zip(rotations)
        .map(|(p, r)| rotate_pose(-r.theta(), p))
        .collect()
}

fn total_objective(
    model: &GaussianPoseModel,
    poses: &[Pose3D],
    rotations: &[PlanarRotation],
    coeffs: &[Vec<f64>],
    prior: PriorForm,
) -> f64 {
    poses
        .iter()
        .zip(rotations)
        .zip(coeffs)
        .map(|((p, r), a)| model.sample_objective(p, *r, a, prior))
        .sum()
}
