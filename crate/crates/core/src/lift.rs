//! 2D-to-3D lifting by quantized search over the ground-plane rotation.
//!
//! For a fixed rotation `θ` the weak-perspective fit
//! `‖Y − s·Π·E·R(θ)·(μ + a·e)‖²` becomes linear after substituting `b = s·a`,
//! so every grid angle is a small ridge-regularized least-squares solve in
//! `(s, b)`. The penalty `λ·Σ (r_j·b_j)²` is applied to `b` directly, with
//! `r_j = √v / σ_j` for [`PriorForm::GaussianPrior`] and `r_j = σ_j` for
//! [`PriorForm::LiteralPaper`].
//!
//! The projected design matrix is affine in `(cos θ, sin θ)`:
//! `D(θ) = cos θ·D_c + sin θ·D_s + D_0`. Its Gram matrix is therefore a
//! fixed quadratic form in `(cos θ, sin θ)`, which lets refinement evaluate
//! off-grid angles without touching the pose data again.

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::TAU;

use nalgebra::{DMatrix, DVector, Vector2};
#[allow(unused_imports)] // shadowed by inherent methods when std is linked
use num_traits::Float;
use thiserror::Error;

use crate::align::{GaussianPoseModel, PriorForm};
use crate::linalg::Cholesky;
use crate::mixture::MixtureModel;
use crate::skeleton::{centroid, normalize_angle, rotate_pose, CameraModel, Pose2D, Pose3D};

/// Floor applied to a non-positive solved scale.
pub const SCALE_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LiftError {
    #[error("normal equations are singular at every grid angle")]
    SingularSystem,
    #[error("expected {expected} landmarks, found {found}")]
    LandmarkCount { expected: usize, found: usize },
    #[error("landmarks contain non-finite values")]
    NonFinite,
    #[error("every mixture component failed")]
    AllComponentsFailed,
}

/// How [`Lifter::lift`] ranks per-component solutions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SelectionRule {
    /// `cost − 2 ln π_k + Σ_j ln σ_jk²`.
    #[default]
    Penalized,
    RawCost,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LiftConfig {
    /// Number of equally spaced rotation samples.
    pub grid_n: usize,
    /// Golden-section polish of the best grid angle.
    pub refine: bool,
    /// Grid size of the exhaustive reference solve.
    pub reference_grid_n: usize,
    pub prior: PriorForm,
    /// Overall regularizer weight λ.
    pub lambda_scale: f64,
    pub selection: SelectionRule,
}

impl Default for LiftConfig {
    fn default() -> Self {
        Self {
            grid_n: 80,
            refine: true,
            reference_grid_n: 10_000,
            prior: PriorForm::GaussianPrior,
            lambda_scale: 1.0,
            selection: SelectionRule::Penalized,
        }
    }
}

impl LiftConfig {
    /// Exhaustive reference configuration: `reference_grid_n` angles, no
    /// refinement.
    pub fn reference(&self) -> Self {
        Self {
            grid_n: self.reference_grid_n,
            refine: false,
            ..*self
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LiftResult {
    pub theta: f64,
    pub scale: f64,
    pub coeffs: Vec<f64>,
    pub component: usize,
    /// `‖Y − s·Π·E·R(θ)(μ + a·e)‖² + λ·Σ (r_j·s·a_j)²` on centered landmarks.
    pub cost: f64,
    /// `R(θ)(μ + a·e)`.
    pub pose3d: Pose3D,
    /// Landmark centroid removed before solving.
    pub offset: Vector2<f64>,
}

struct AngleSolution {
    theta: f64,
    x: Vec<f64>,
    cost: f64,
}

/// Per-frame products with the angle-independent design blocks.
struct FrameProducts {
    y: DVector<f64>,
    yy: f64,
    uc: DVector<f64>,
    us: DVector<f64>,
    u0: DVector<f64>,
    offset: Vector2<f64>,
}

/// Precomputed projections of one model under a grid of rotations.
#[derive(Debug, Clone)]
pub struct RotationTable {
    grid_n: usize,
    joints: usize,
    dc: DMatrix<f64>,
    ds: DMatrix<f64>,
    d0: DMatrix<f64>,
    // DcᵀDc, DsᵀDs, DcᵀDs+DsᵀDc, DcᵀD0+D0ᵀDc, DsᵀD0+D0ᵀDs, D0ᵀD0
    gram: [DMatrix<f64>; 6],
    penalty: Vec<f64>,
    factors: Vec<Option<Cholesky>>,
}

impl RotationTable {
    /// Tabulates `Π·E·R(θ_i)·μ` and `Π·E·R(θ_i)·e_j` for
    /// `θ_i = 2π·i / grid_n`, together with the factored normal equations.
    pub fn new(model: &GaussianPoseModel, camera: &CameraModel, grid_n: usize, config: &LiftConfig) -> Self {
        let grid_n = grid_n.max(1);
        let l = model.num_joints();
        let cols = model.basis_size() + 1;
        let proj = camera.projection();
        let (mut dc, mut ds, mut d0) = (
            DMatrix::zeros(2 * l, cols),
            DMatrix::zeros(2 * l, cols),
            DMatrix::zeros(2 * l, cols),
        );
        for k in 0..cols {
            let pose = if k == 0 { model.mean().clone() } else { model.basis_pose(k - 1) };
            for (jt, p) in pose.column_iter().enumerate() {
                let (x, y, z) = (p[0], p[1], p[2]);
                for r in 0..2 {
                    dc[(2 * jt + r, k)] = proj[(r, 0)] * x + proj[(r, 2)] * z;
                    ds[(2 * jt + r, k)] = proj[(r, 0)] * z - proj[(r, 2)] * x;
                    d0[(2 * jt + r, k)] = proj[(r, 1)] * y;
                }
            }
        }
        // Center every design column so the landmark centroid acts as a free
        // 2D translation.
        for d in [&mut dc, &mut ds, &mut d0] {
            for k in 0..cols {
                for r in 0..2 {
                    let mean = (0..l).map(|jt| d[(2 * jt + r, k)]).sum::<f64>() / l as f64;
                    for jt in 0..l {
                        d[(2 * jt + r, k)] -= mean;
                    }
                }
            }
        }
        let sym = |a: &DMatrix<f64>, b: &DMatrix<f64>| {
            let m = a.tr_mul(b);
            &m + m.transpose()
        };
        let gram = [
            dc.tr_mul(&dc),
            ds.tr_mul(&ds),
            sym(&dc, &ds),
            sym(&dc, &d0),
            sym(&ds, &d0),
            d0.tr_mul(&d0),
        ];
        let mut penalty = vec![0.0; cols];
        for j in 0..model.basis_size() {
            let s = model.sigma()[j];
            penalty[j + 1] = config.lambda_scale
                * match config.prior {
                    PriorForm::GaussianPrior => model.noise_var() / (s * s),
                    PriorForm::LiteralPaper => s * s,
                };
        }
        let mut table = Self {
            grid_n,
            joints: l,
            dc,
            ds,
            d0,
            gram,
            penalty,
            factors: Vec::new(),
        };
        table.factors = (0..grid_n)
            .map(|i| {
                let (s, c) = table.angle(i).sin_cos();
                Cholesky::factor(table.system(c, s).as_slice(), cols)
            })
            .collect();
        table
    }

    pub fn grid_n(&self) -> usize {
        self.grid_n
    }

    pub fn angle(&self, i: usize) -> f64 {
        TAU * i as f64 / self.grid_n as f64
    }

    fn design(&self, c: f64, s: f64) -> DMatrix<f64> {
        &self.dc * c + &self.ds * s + &self.d0
    }

    /// `Π·E·R(θ_i)·μ`.
    pub fn projected_mean(&self, i: usize) -> Pose2D {
        let (s, c) = self.angle(i).sin_cos();
        Pose2D::from_column_slice(self.design(c, s).column(0).as_slice())
    }

    /// `Π·E·R(θ_i)·e_j`.
    pub fn projected_basis(&self, i: usize, j: usize) -> Pose2D {
        let (s, c) = self.angle(i).sin_cos();
        Pose2D::from_column_slice(self.design(c, s).column(j + 1).as_slice())
    }

    fn gram_at(&self, c: f64, s: f64) -> DMatrix<f64> {
        let g = &self.gram;
        &g[0] * (c * c) + &g[1] * (s * s) + &g[2] * (c * s) + &g[3] * c + &g[4] * s + &g[5]
    }

    /// Regularized normal matrix, row-major (it is symmetric).
    fn system(&self, c: f64, s: f64) -> DMatrix<f64> {
        let mut m = self.gram_at(c, s);
        for (k, p) in self.penalty.iter().enumerate() {
            m[(k, k)] += p;
        }
        m
    }

    fn products(&self, y2d: &Pose2D) -> Result<FrameProducts, LiftError> {
        if y2d.ncols() != self.joints {
            return Err(LiftError::LandmarkCount {
                expected: self.joints,
                found: y2d.ncols(),
            });
        }
        if !y2d.iter().all(|v| v.is_finite()) {
            return Err(LiftError::NonFinite);
        }
        let offset = centroid(y2d);
        let mut y = DVector::from_column_slice(y2d.as_slice());
        for (k, v) in y.iter_mut().enumerate() {
            *v -= offset[k % 2];
        }
        Ok(FrameProducts {
            yy: y.norm_squared(),
            uc: self.dc.tr_mul(&y),
            us: self.ds.tr_mul(&y),
            u0: self.d0.tr_mul(&y),
            y,
            offset,
        })
    }

    fn rhs(&self, f: &FrameProducts, c: f64, s: f64) -> Vec<f64> {
        (0..f.u0.len()).map(|k| c * f.uc[k] + s * f.us[k] + f.u0[k]).collect()
    }

    fn solve_with(&self, f: &FrameProducts, theta: f64, factor: Option<&Cholesky>) -> Option<AngleSolution> {
        let (s, c) = theta.sin_cos();
        let u = self.rhs(f, c, s);
        let mut x = u.clone();
        match factor {
            Some(ch) => ch.solve_in_place(&mut x),
            None => Cholesky::factor(self.system(c, s).as_slice(), u.len())?.solve_in_place(&mut x),
        }
        if x[0] > SCALE_FLOOR {
            let fit: f64 = x.iter().zip(&u).map(|(a, b)| a * b).sum();
            return Some(AngleSolution {
                theta,
                cost: (f.yy - fit).max(0.0),
                x,
            });
        }
        self.solve_clamped(f, theta, &u)
    }

    /// Fixes the scale at [`SCALE_FLOOR`] and solves for `b` alone.
    fn solve_clamped(&self, f: &FrameProducts, theta: f64, u: &[f64]) -> Option<AngleSolution> {
        let (s, c) = theta.sin_cos();
        let sys = self.system(c, s);
        let n = u.len();
        let mut x = vec![SCALE_FLOOR; 1];
        if n > 1 {
            let sub = sys.view((1, 1), (n - 1, n - 1)).into_owned();
            let mut b: Vec<f64> = (1..n).map(|k| u[k] - SCALE_FLOOR * sys[(k, 0)]).collect();
            Cholesky::factor(sub.as_slice(), n - 1)?.solve_in_place(&mut b);
            x.extend(b);
        }
        // ‖y − Dx‖² + xᵀΛx = yᵀy − 2xᵀu + xᵀ(G + Λ)x
        let xv = DVector::from_column_slice(&x);
        let quad = xv.dot(&(&sys * &xv));
        let lin: f64 = x.iter().zip(u).map(|(a, b)| a * b).sum();
        Some(AngleSolution {
            theta,
            cost: (f.yy - 2.0 * lin + quad).max(0.0),
            x,
        })
    }

    fn grid_search(&self, f: &FrameProducts) -> Option<AngleSolution> {
        let mut best: Option<AngleSolution> = None;
        for (i, factor) in self.factors.iter().enumerate() {
            let Some(factor) = factor else { continue };
            if let Some(sol) = self.solve_with(f, self.angle(i), Some(factor)) {
                if best.as_ref().is_none_or(|b| sol.cost < b.cost) {
                    best = Some(sol);
                }
            }
        }
        best
    }

    /// Golden-section search on `θ` within one grid step either side of the
    /// best grid angle; `(s, b)` are re-solved in closed form at every probe.
    fn refine(&self, f: &FrameProducts, start: AngleSolution) -> AngleSolution {
        const INV_PHI: f64 = 0.618_033_988_749_894_9;
        let step = TAU / self.grid_n as f64;
        let eval = |t: f64| self.solve_with(f, t, None);
        let mut best = start;
        let (mut lo, mut hi) = (best.theta - step, best.theta + step);
        let mut a = hi - INV_PHI * (hi - lo);
        let mut b = lo + INV_PHI * (hi - lo);
        let (mut fa, mut fb) = (eval(a), eval(b));
        let cost = |s: &Option<AngleSolution>| s.as_ref().map_or(f64::INFINITY, |s| s.cost);
        for _ in 0..200 {
            if hi - lo < 1e-10 {
                break;
            }
            if cost(&fa) < cost(&fb) {
                hi = b;
                b = a;
                fb = fa;
                a = hi - INV_PHI * (hi - lo);
                fa = eval(a);
            } else {
                lo = a;
                a = b;
                fa = fb;
                b = lo + INV_PHI * (hi - lo);
                fb = eval(b);
            }
            for cand in [&mut fa, &mut fb] {
                if cost(cand) < best.cost {
                    if let Some(c) = cand.as_ref() {
                        best = AngleSolution {
                            theta: c.theta,
                            x: c.x.clone(),
                            cost: c.cost,
                        };
                    }
                }
            }
        }
        best
    }

    fn finish(&self, model: &GaussianPoseModel, f: &FrameProducts, sol: AngleSolution, component: usize) -> LiftResult {
        let theta = normalize_angle(sol.theta);
        let scale = sol.x[0];
        let coeffs: Vec<f64> = sol.x[1..].iter().map(|b| b / scale).collect();
        let (s, c) = sol.theta.sin_cos();
        let residual = &f.y - self.design(c, s) * DVector::from_column_slice(&sol.x);
        let penalty: f64 = sol.x.iter().zip(&self.penalty).map(|(x, p)| p * x * x).sum();
        LiftResult {
            theta,
            scale,
            pose3d: rotate_pose(theta, &model.reconstruct(&coeffs)),
            coeffs,
            component,
            cost: residual.norm_squared() + penalty,
            offset: f.offset,
        }
    }

    /// Lifts one frame with the model this table was built from.
    pub fn lift(
        &self,
        y2d: &Pose2D,
        model: &GaussianPoseModel,
        refine: bool,
        component: usize,
    ) -> Result<LiftResult, LiftError> {
        let f = self.products(y2d)?;
        let best = self.grid_search(&f).ok_or(LiftError::SingularSystem)?;
        let best = if refine { self.refine(&f, best) } else { best };
        Ok(self.finish(model, &f, best, component))
    }

    /// `(s, a, cost)` at grid angle `i`.
    pub fn solve_scale_coeffs(&self, y2d: &Pose2D, i: usize) -> Result<(f64, Vec<f64>, f64), LiftError> {
        let f = self.products(y2d)?;
        let sol = self
            .solve_with(&f, self.angle(i), self.factors[i].as_ref())
            .ok_or(LiftError::SingularSystem)?;
        let s = sol.x[0];
        Ok((s, sol.x[1..].iter().map(|b| b / s).collect(), sol.cost))
    }
}

/// Lifter for a mixture, holding one rotation table per component.
#[derive(Debug, Clone)]
pub struct Lifter<'m> {
    mixture: &'m MixtureModel,
    config: LiftConfig,
    tables: Vec<RotationTable>,
    penalties: Vec<f64>,
}

impl<'m> Lifter<'m> {
    pub fn new(mixture: &'m MixtureModel, camera: &CameraModel, config: LiftConfig) -> Self {
        let tables = mixture
            .components()
            .iter()
            .map(|m| RotationTable::new(m, camera, config.grid_n, &config))
            .collect();
        let penalties = mixture
            .components()
            .iter()
            .zip(mixture.weights())
            .map(|(m, &w)| match config.selection {
                SelectionRule::RawCost => 0.0,
                SelectionRule::Penalized => {
                    -2.0 * w.ln() + m.sigma().iter().map(|s| (s * s).ln()).sum::<f64>()
                }
            })
            .collect();
        Self {
            mixture,
            config,
            tables,
            penalties,
        }
    }

    pub fn config(&self) -> &LiftConfig {
        &self.config
    }

    pub fn tables(&self) -> &[RotationTable] {
        &self.tables
    }

    /// Lifts with component `k` only.
    pub fn lift_component(&self, y2d: &Pose2D, k: usize) -> Result<LiftResult, LiftError> {
        self.tables[k].lift(y2d, &self.mixture.components()[k], self.config.refine, k)
    }

    /// Solves every component and keeps the best-scoring one.
    pub fn lift(&self, y2d: &Pose2D) -> Result<LiftResult, LiftError> {
        let mut best: Option<(f64, LiftResult)> = None;
        let mut last_err = None;
        for k in 0..self.tables.len() {
            match self.lift_component(y2d, k) {
                Ok(r) => {
                    let score = r.cost + self.penalties[k];
                    if best.as_ref().is_none_or(|(b, _)| score < *b) {
                        best = Some((score, r));
                    }
                }
                Err(e) => last_err = Some(e),
            }
        }
        match (best, last_err) {
            (Some((_, r)), _) => Ok(r),
            (None, Some(e)) if self.tables.len() == 1 => Err(e),
            _ => Err(LiftError::AllComponentsFailed),
        }
    }

    /// Lifts every frame independently; errors stay with their frame.
    pub fn lift_batch(&self, frames: &[Pose2D]) -> Vec<Result<LiftResult, LiftError>> {
        frames.iter().map(|f| self.lift(f)).collect()
    }
}

pub fn precompute_rotation_tables(
    model: &GaussianPoseModel,
    camera: &CameraModel,
    grid_n: usize,
    config: &LiftConfig,
) -> RotationTable {
    RotationTable::new(model, camera, grid_n, config)
}

pub fn solve_scale_coeffs(
    y2d: &Pose2D,
    table: &RotationTable,
    index: usize,
) -> Result<(f64, Vec<f64>, f64), LiftError> {
    table.solve_scale_coeffs(y2d, index)
}

pub fn lift_single(
    y2d: &Pose2D,
    model: &GaussianPoseModel,
    camera: &CameraModel,
    config: &LiftConfig,
) -> Result<LiftResult, LiftError> {
    RotationTable::new(model, camera, config.grid_n, config).lift(y2d, model, config.refine, 0)
}

pub fn lift_mixture(
    y2d: &Pose2D,
    mixture: &MixtureModel,
    camera: &CameraModel,
    config: &LiftConfig,
) -> Result<LiftResult, LiftError> {
    Lifter::new(mixture, camera, *config).lift(y2d)
}

pub fn lift_batch(
    frames: &[Pose2D],
    mixture: &MixtureModel,
    camera: &CameraModel,
    config: &LiftConfig,
) -> Vec<Result<LiftResult, LiftError>> {
    Lifter::new(mixture, camera, *config).lift_batch(frames)
}
