//! Stage-wise refinement harness with a synthetic noisy observer in place of
//! a learned belief-map predictor.
//!
//! Each stage lifts the current landmarks, projects the lifted pose, renders
//! it as belief maps, fuses those with the observation and re-extracts.

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::TAU;

use nalgebra::Vector2;
#[allow(unused_imports)] // shadowed by inherent methods when std is linked
use num_traits::Float;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

use crate::align::GaussianPoseModel;
use crate::beliefmap::{
    extract_landmarks, fuse, project_pose, render_beliefs, stage_loss, BeliefError, BeliefStack, FusionWeight,
    DEFAULT_BLUR, DEFAULT_MAP_SIZE,
};
use crate::lift::{LiftError, LiftResult, Lifter};
use crate::metrics::{mean_error_2d, planar_aligned_error};
use crate::mixture::MixtureModel;
use crate::skeleton::{center, rotate_pose, CameraModel, Pose2D, Pose3D};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("stage {stage}: {source}")]
    Lift { stage: usize, source: LiftError },
    #[error(transparent)]
    Belief(#[from] BeliefError),
    #[error("invalid simulation config: {0}")]
    Config(&'static str),
}

/// Per-landmark corruption applied by the synthetic observer, in pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseModel {
    pub jitter_std: f64,
    pub outlier_prob: f64,
    pub outlier_px: f64,
}

impl Default for NoiseModel {
    fn default() -> Self {
        Self {
            jitter_std: 2.0,
            outlier_prob: 0.05,
            outlier_px: 10.0,
        }
    }
}

impl NoiseModel {
    pub fn none() -> Self {
        Self {
            jitter_std: 0.0,
            outlier_prob: 0.0,
            outlier_px: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub stages: usize,
    pub noise: NoiseModel,
    pub fusion_weights: Vec<FusionWeight>,
    pub seed: u64,
    pub width: usize,
    pub height: usize,
    pub blur: f64,
    /// Pixels per model unit.
    pub pixel_scale: f64,
    /// Lift with one component instead of the whole mixture.
    pub component: Option<usize>,
}

pub const DEFAULT_FUSION_WEIGHT: f64 = 0.4;

impl Default for SimConfig {
    fn default() -> Self {
        Self::with_stages(6)
    }
}

impl SimConfig {
    pub fn with_stages(stages: usize) -> Self {
        Self {
            stages,
            noise: NoiseModel::default(),
            fusion_weights: vec![FusionWeight::new(DEFAULT_FUSION_WEIGHT).unwrap(); stages],
            seed: 0,
            width: DEFAULT_MAP_SIZE,
            height: DEFAULT_MAP_SIZE,
            blur: DEFAULT_BLUR,
            pixel_scale: 30.0,
            component: None,
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if self.stages == 0 {
            return Err(SimError::Config("at least one stage is required"));
        }
        if self.fusion_weights.len() != self.stages {
            return Err(SimError::Config("one fusion weight per stage is required"));
        }
        if !(0.0..=1.0).contains(&self.noise.outlier_prob) {
            return Err(SimError::Config("outlier probability outside [0, 1]"));
        }
        if !(self.noise.jitter_std >= 0.0 && self.noise.outlier_px >= 0.0) {
            return Err(SimError::Config("noise magnitudes must be nonnegative"));
        }
        if self.width == 0 || self.height == 0 || !(self.blur > 0.0) || !(self.pixel_scale > 0.0) {
            return Err(SimError::Config("map size, blur and pixel scale must be positive"));
        }
        Ok(())
    }

    /// Random stream for frame `frame` of a run seeded with `self.seed`.
    pub fn frame_rng(&self, frame: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(frame);
        rng
    }
}

/// Pixel landmarks of a model-unit pose, centered in the map.
pub fn image_landmarks(gt3d: &Pose3D, camera: &CameraModel, sim: &SimConfig) -> Pose2D {
    let mut p = center(&camera.project(gt3d, sim.pixel_scale));
    let mid = Vector2::new((sim.width - 1) as f64 / 2.0, (sim.height - 1) as f64 / 2.0);
    for mut c in p.column_iter_mut() {
        c += mid;
    }
    p
}

/// Jittered and possibly displaced landmark locations.
pub fn corrupt_landmarks<R: Rng>(gt2d: &Pose2D, noise: &NoiseModel, rng: &mut R) -> Pose2D {
    let mut out = gt2d.clone();
    for mut c in out.column_iter_mut() {
        let dx: f64 = StandardNormal.sample(rng);
        let dy: f64 = StandardNormal.sample(rng);
        c[0] += noise.jitter_std * dx;
        c[1] += noise.jitter_std * dy;
        if rng.random::<f64>() < noise.outlier_prob {
            let (s, co) = rng.random_range(0.0..TAU).sin_cos();
            c[0] += noise.outlier_px * co;
            c[1] += noise.outlier_px * s;
        }
    }
    out
}

/// Belief maps of a corrupted copy of `gt2d`.
pub fn synth_observation(gt2d: &Pose2D, sim: &SimConfig, seed: u64) -> BeliefStack {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    synth_observation_with(gt2d, sim, &mut rng)
}

pub fn synth_observation_with<R: Rng>(gt2d: &Pose2D, sim: &SimConfig, rng: &mut R) -> BeliefStack {
    let noisy = corrupt_landmarks(gt2d, &sim.noise, rng);
    render_beliefs(&noisy, sim.width, sim.height, sim.blur)
}

/// Draws `R(θ)(μ + a·e)` with `a_j ~ N(0, σ_j²)` and `θ` uniform.
pub fn sample_pose<R: Rng>(model: &GaussianPoseModel, rng: &mut R) -> (Pose3D, f64, Vec<f64>) {
    let coeffs: Vec<f64> = model
        .sigma()
        .iter()
        .map(|s| {
            let z: f64 = StandardNormal.sample(rng);
            s * z
        })
        .collect();
    let theta = rng.random_range(0.0..TAU);
    (rotate_pose(theta, &model.reconstruct(&coeffs)), theta, coeffs)
}

/// As [`sample_pose`], with the component drawn by mixture weight.
pub fn sample_mixture_pose<R: Rng>(mixture: &MixtureModel, rng: &mut R) -> (Pose3D, usize) {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut k = mixture.len() - 1;
    for (i, w) in mixture.weights().iter().enumerate() {
        acc += w;
        if u < acc {
            k = i;
            break;
        }
    }
    (sample_pose(&mixture.components()[k], rng).0, k)
}

#[derive(Debug, Clone, PartialEq)]
pub struct StageRecord {
    /// Landmarks the stage lifted.
    pub extracted: Pose2D,
    pub lift: LiftResult,
    pub projected: Pose2D,
    /// Stage loss of the fused maps against the ground-truth maps.
    pub loss: f64,
    /// Mean over landmark channels of the fused channel maximum.
    pub fused_peak: f64,
    pub error_2d: f64,
    pub error_3d: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StageTrace {
    pub gt2d: Pose2D,
    pub stages: Vec<StageRecord>,
}

fn lift_with(lifter: &Lifter<'_>, sim: &SimConfig, y: &Pose2D) -> Result<LiftResult, LiftError> {
    match sim.component {
        Some(k) => lifter.lift_component(y, k),
        None => lifter.lift(y),
    }
}

/// State carried into one stage: the landmarks it will lift.
struct Stage<'a> {
    observation: &'a BeliefStack,
    gt_maps: &'a BeliefStack,
    current: Pose2D,
}

/// Lift, project and render for one stage; independent of the stage weight.
fn stage_prior(
    lifter: &Lifter<'_>,
    camera: &CameraModel,
    sim: &SimConfig,
    current: &Pose2D,
    stage: usize,
) -> Result<(LiftResult, Pose2D, BeliefStack), SimError> {
    let lift = lift_with(lifter, sim, current).map_err(|source| SimError::Lift { stage, source })?;
    let projected = project_pose(&lift, camera);
    let b_hat = render_beliefs(&projected, sim.width, sim.height, sim.blur);
    Ok((lift, projected, b_hat))
}

fn fused_peak(stack: &BeliefStack) -> f64 {
    let l = stack.landmarks();
    (0..l)
        .map(|c| stack.channel(c).iter().copied().fold(0.0, f64::max))
        .sum::<f64>()
        / l as f64
}

/// Runs every stage on one frame given its observation stack.
pub fn run_stages_on(
    gt3d: &Pose3D,
    gt2d: &Pose2D,
    observation: &BeliefStack,
    lifter: &Lifter<'_>,
    camera: &CameraModel,
    sim: &SimConfig,
) -> Result<StageTrace, SimError> {
    sim.validate()?;
    let gt_maps = render_beliefs(gt2d, sim.width, sim.height, sim.blur);
    let mut state = Stage {
        observation,
        gt_maps: &gt_maps,
        current: extract_landmarks(observation)?,
    };
    let mut stages = Vec::with_capacity(sim.stages);
    for (t, w) in sim.fusion_weights.iter().enumerate() {
        let (lift, projected, b_hat) = stage_prior(lifter, camera, sim, &state.current, t + 1)?;
        let fused = fuse(state.observation, &b_hat, *w)?;
        let next = extract_landmarks(&fused)?;
        let extracted = core::mem::replace(&mut state.current, next);
        stages.push(StageRecord {
            error_2d: mean_error_2d(&extracted, gt2d).expect("landmark counts agree"),
            error_3d: planar_aligned_error(&lift.pose3d, gt3d).expect("joint counts agree"),
            loss: stage_loss(&fused, state.gt_maps)?,
            fused_peak: fused_peak(&fused),
            extracted,
            lift,
            projected,
        });
    }
    Ok(StageTrace {
        gt2d: gt2d.clone(),
        stages,
    })
}

/// Synthesizes the observation for frame `frame` and runs every stage.
pub fn run_stages_frame(
    gt3d: &Pose3D,
    lifter: &Lifter<'_>,
    camera: &CameraModel,
    sim: &SimConfig,
    frame: u64,
) -> Result<StageTrace, SimError> {
    let gt2d = image_landmarks(gt3d, camera, sim);
    let obs = synth_observation_with(&gt2d, sim, &mut sim.frame_rng(frame));
    run_stages_on(gt3d, &gt2d, &obs, lifter, camera, sim)
}

pub fn run_stages(
    gt3d: &Pose3D,
    mixture: &MixtureModel,
    camera: &CameraModel,
    sim: &SimConfig,
    lift: crate::lift::LiftConfig,
) -> Result<StageTrace, SimError> {
    let lifter = Lifter::new(mixture, camera, lift);
    run_stages_frame(gt3d, &lifter, camera, sim, 0)
}

/// A frame used to fit fusion weights.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingFrame {
    pub gt2d: Pose2D,
    pub observation: BeliefStack,
}

impl TrainingFrame {
    pub fn synthesize(gt3d: &Pose3D, camera: &CameraModel, sim: &SimConfig, frame: u64) -> Self {
        let gt2d = image_landmarks(gt3d, camera, sim);
        let observation = synth_observation_with(&gt2d, sim, &mut sim.frame_rng(frame));
        Self { gt2d, observation }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusionFit {
    pub weights: Vec<FusionWeight>,
    /// Mean stage loss per stage under `weights`.
    pub stage_losses: Vec<f64>,
}

pub const WEIGHT_GRID_STEPS: usize = 20;

/// Stage-by-stage grid search of the fusion weights, two passes. Each `w_t`
/// minimizes the mean stage-`t` loss given the earlier weights; ties go to
/// the largest weight.
pub fn fit_fusion_weights(
    frames: &[TrainingFrame],
    lifter: &Lifter<'_>,
    camera: &CameraModel,
    sim: &SimConfig,
) -> Result<FusionFit, SimError> {
    sim.validate()?;
    if frames.is_empty() {
        return Err(SimError::Config("no training frames"));
    }
    let grid: Vec<FusionWeight> = (0..=WEIGHT_GRID_STEPS)
        .rev()
        .map(|i| FusionWeight::new(i as f64 / WEIGHT_GRID_STEPS as f64).unwrap())
        .collect();
    let gt_maps: Vec<BeliefStack> = frames
        .iter()
        .map(|f| render_beliefs(&f.gt2d, sim.width, sim.height, sim.blur))
        .collect();
    let mut weights = sim.fusion_weights.clone();
    let mut stage_losses = vec![0.0; sim.stages];
    let n = frames.len() as f64;
    for _pass in 0..2 {
        let mut current: Vec<Pose2D> = frames
            .iter()
            .map(|f| extract_landmarks(&f.observation))
            .collect::<Result<_, _>>()?;
        for t in 0..sim.stages {
            let priors: Vec<BeliefStack> = current
                .iter()
                .map(|c| stage_prior(lifter, camera, sim, c, t + 1).map(|p| p.2))
                .collect::<Result<_, _>>()?;
            let mut best: Option<(FusionWeight, f64)> = None;
            for w in &grid {
                let mut total = 0.0;
                for ((f, b_hat), gt) in frames.iter().zip(&priors).zip(&gt_maps) {
                    total += stage_loss(&fuse(&f.observation, b_hat, *w)?, gt)?;
                }
                if best.is_none_or(|(_, l)| total < l) {
                    best = Some((*w, total));
                }
            }
            let (w, total) = best.expect("nonempty grid");
            weights[t] = w;
            stage_losses[t] = total / n;
            for ((c, f), b_hat) in current.iter_mut().zip(frames).zip(&priors) {
                *c = extract_landmarks(&fuse(&f.observation, b_hat, w)?)?;
            }
        }
    }
    Ok(FusionFit { weights, stage_losses })
}
