//! Mixture of PPCA pose models: greedy exemplar initialization and EM.

use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)] // shadowed by inherent methods when std is linked
use num_traits::Float;
use thiserror::Error;

use crate::align::{ppca_closed_form, ppca_weighted, AlignError, GaussianPoseModel, ModelError};
use crate::skeleton::Pose3D;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MixtureError {
    #[error("no poses given")]
    EmptyDataset,
    #[error("no components given")]
    NoComponents,
    #[error("component {component} collapsed ({mass:.3} effective samples)")]
    CollapsedComponent { component: usize, mass: f64 },
    #[error("mixing weights must be non-negative and sum to one")]
    Weights,
    #[error("components disagree on pose dimension")]
    Dimension,
    #[error(transparent)]
    Align(#[from] AlignError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Weighted collection of [`GaussianPoseModel`] components.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureModel {
    components: Vec<GaussianPoseModel>,
    weights: Vec<f64>,
}

impl MixtureModel {
    pub fn new(components: Vec<GaussianPoseModel>, weights: Vec<f64>) -> Result<Self, MixtureError> {
        if components.is_empty() {
            return Err(MixtureError::NoComponents);
        }
        if weights.len() != components.len()
            || weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite())
            || (weights.iter().sum::<f64>() - 1.0).abs() > 1e-10
        {
            return Err(MixtureError::Weights);
        }
        let dim = components[0].dim();
        if components.iter().any(|c| c.dim() != dim) {
            return Err(MixtureError::Dimension);
        }
        Ok(Self { components, weights })
    }

    pub fn single(model: GaussianPoseModel) -> Self {
        Self {
            components: vec![model],
            weights: vec![1.0],
        }
    }

    pub fn components(&self) -> &[GaussianPoseModel] {
        &self.components
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    pub fn num_joints(&self) -> usize {
        self.components[0].num_joints()
    }

    /// Per-component `ln π_k + ln N_k(pose)`.
    pub fn component_log_joint(&self, pose: &Pose3D) -> Vec<f64> {
        self.components
            .iter()
            .zip(&self.weights)
            .map(|(c, &w)| if w > 0.0 { w.ln() + c.log_density(pose) } else { f64::NEG_INFINITY })
            .collect()
    }

    /// Posterior component probabilities for a pose.
    pub fn responsibilities(&self, pose: &Pose3D) -> Vec<f64> {
        let lj = self.component_log_joint(pose);
        let norm = log_sum_exp(&lj);
        lj.iter().map(|v| (v - norm).exp()).collect()
    }
}

/// `ln Σ_k π_k N(pose; μ_k, e_k diag(σ_k²) e_kᵀ + v_k I)`.
pub fn model_log_density(pose: &Pose3D, mixture: &MixtureModel) -> f64 {
    log_sum_exp(&mixture.component_log_joint(pose))
}

fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Greedily chosen cluster seeds, as indices into the pose list they were
/// selected from.
#[derive(Debug, Clone, PartialEq)]
pub struct ExemplarSet {
    pub indices: Vec<usize>,
    pub min_separation: f64,
}

/// Euclidean distance between unwrapped poses.
pub fn pose_distance(a: &Pose3D, b: &Pose3D) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Every `stride`-th pose, starting with the first.
pub fn subsample(poses: &[Pose3D], stride: usize) -> Vec<Pose3D> {
    poses.iter().step_by(stride.max(1)).cloned().collect()
}

/// `factor` times the median pairwise distance.
pub fn default_min_separation(poses: &[Pose3D], factor: f64) -> f64 {
    let mut d = Vec::with_capacity(poses.len() * poses.len().saturating_sub(1) / 2);
    for i in 0..poses.len() {
        for j in i + 1..poses.len() {
            d.push(pose_distance(&poses[i], &poses[j]));
        }
    }
    if d.is_empty() {
        return 0.0;
    }
    d.sort_by(f64::total_cmp);
    let m = d.len();
    let median = if m % 2 == 1 { d[m / 2] } else { 0.5 * (d[m / 2 - 1] + d[m / 2]) };
    factor * median
}

/// Greedy minimization of `Σ_p min_{s∈S} d(s, p)`.
///
/// The first exemplar is the medoid. Each further exemplar is the candidate
/// that most lowers the cost with the earlier ones held fixed; selection
/// stops at `k_max` or as soon as the best candidate lies closer than
/// `min_separation` to an existing exemplar. Ties go to the lowest index.
pub fn select_exemplars(
    poses: &[Pose3D],
    k_max: usize,
    min_separation: f64,
) -> Result<ExemplarSet, MixtureError> {
    let n = poses.len();
    if n == 0 {
        return Err(MixtureError::EmptyDataset);
    }
    let mut dist = vec![0.0; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let d = pose_distance(&poses[i], &poses[j]);
            dist[i * n + j] = d;
            dist[j * n + i] = d;
        }
    }
    let mut indices: Vec<usize> = Vec::new();
    let mut nearest = vec![f64::INFINITY; n];
    let mut chosen = vec![false; n];
    while indices.len() < k_max {
        let mut best: Option<(usize, f64)> = None;
        for c in (0..n).filter(|&c| !chosen[c]) {
            let row = &dist[c * n..(c + 1) * n];
            let cost: f64 = nearest.iter().zip(row).map(|(m, d)| m.min(*d)).sum();
            if best.is_none_or(|(_, b)| cost < b) {
                best = Some((c, cost));
            }
        }
        let Some((c, _)) = best else { break };
        if indices.iter().any(|&s| dist[s * n + c] < min_separation) {
            break;
        }
        chosen[c] = true;
        indices.push(c);
        for (m, d) in nearest.iter_mut().zip(&dist[c * n..(c + 1) * n]) {
            *m = m.min(*d);
        }
    }
    Ok(ExemplarSet {
        indices,
        min_separation,
    })
}

/// Index of the nearest exemplar for every pose, ties to the lowest index.
pub fn assign_clusters(poses: &[Pose3D], exemplars: &[Pose3D]) -> Vec<usize> {
    poses
        .iter()
        .map(|p| {
            let mut best = (0, f64::INFINITY);
            for (k, e) in exemplars.iter().enumerate() {
                let d = pose_distance(p, e);
                if d < best.1 {
                    best = (k, d);
                }
            }
            best.0
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CollapsePolicy {
    /// Drop the component and keep going with one fewer.
    #[default]
    Remove,
    /// Abort with [`MixtureError::CollapsedComponent`].
    Fail,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmConfig {
    pub tol: f64,
    pub max_iters: usize,
    pub collapse: CollapsePolicy,
}

impl Default for EmConfig {
    fn default() -> Self {
        Self {
            tol: 1e-6,
            max_iters: 500,
            collapse: CollapsePolicy::Remove,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct EmReport {
    /// Total data log-likelihood after initialization and after every M-step.
    pub log_likelihood: Vec<f64>,
    /// Positions in `log_likelihood` right after a component was removed;
    /// monotonicity only holds between these points.
    pub resets: Vec<usize>,
    /// Original indices of removed components.
    pub removed: Vec<usize>,
    pub iterations: usize,
    pub converged: bool,
}

/// Mixture-of-PPCA EM seeded by a hard assignment to the nearest exemplar.
///
/// The initial components are per-cluster closed-form PPCA fits weighted by
/// cluster size. Each M-step refits every component by closed-form PPCA on
/// its responsibility-weighted covariance, which is the exact maximizer, so
/// the log-likelihood never decreases.
pub fn train_mppca(
    poses: &[Pose3D],
    exemplars: &[Pose3D],
    j: usize,
    config: &EmConfig,
) -> Result<(MixtureModel, EmReport), MixtureError> {
    if poses.is_empty() {
        return Err(MixtureError::EmptyDataset);
    }
    if exemplars.is_empty() {
        return Err(MixtureError::NoComponents);
    }
    let n = poses.len();
    let assignment = assign_clusters(poses, exemplars);
    let mut report = EmReport::default();
    let mut ids: Vec<usize> = Vec::new();
    let mut components = Vec::new();
    let mut weights = Vec::new();
    for k in 0..exemplars.len() {
        let members: Vec<Pose3D> = poses
            .iter()
            .zip(&assignment)
            .filter(|(_, &a)| a == k)
            .map(|(p, _)| p.clone())
            .collect();
        if members.len() < j + 1 {
            match config.collapse {
                CollapsePolicy::Fail => {
                    return Err(MixtureError::CollapsedComponent {
                        component: k,
                        mass: members.len() as f64,
                    })
                }
                CollapsePolicy::Remove => {
                    report.removed.push(k);
                    continue;
                }
            }
        }
        weights.push(members.len() as f64 / n as f64);
        components.push(ppca_closed_form(&members, j)?);
        ids.push(k);
    }
    if components.is_empty() {
        return Err(MixtureError::CollapsedComponent {
            component: 0,
            mass: 0.0,
        });
    }
    renormalize(&mut weights);
    let mut mixture = MixtureModel { components, weights };
    let (mut resp, mut ll) = e_step(poses, &mixture);
    report.log_likelihood.push(ll);

    for _ in 0..config.max_iters {
        report.iterations += 1;
        let mut components = Vec::with_capacity(mixture.len());
        let mut weights = Vec::with_capacity(mixture.len());
        let mut kept = Vec::with_capacity(mixture.len());
        for k in 0..mixture.len() {
            let r: Vec<f64> = resp.iter().map(|row| row[k]).collect();
            let mass: f64 = r.iter().sum();
            if !(mass >= (j + 1) as f64) {
                match config.collapse {
                    CollapsePolicy::Fail => {
                        return Err(MixtureError::CollapsedComponent { component: ids[k], mass })
                    }
                    CollapsePolicy::Remove => {
                        report.removed.push(ids[k]);
                        continue;
                    }
                }
            }
            weights.push(mass / n as f64);
            components.push(ppca_weighted(poses, &r, j)?);
            kept.push(ids[k]);
        }
        if components.is_empty() {
            return Err(MixtureError::CollapsedComponent {
                component: ids[0],
                mass: 0.0,
            });
        }
        let removed_now = kept.len() != ids.len();
        ids = kept;
        renormalize(&mut weights);
        mixture = MixtureModel { components, weights };
        let previous = ll;
        (resp, ll) = e_step(poses, &mixture);
        report.log_likelihood.push(ll);
        if removed_now {
            report.resets.push(report.log_likelihood.len() - 1);
            continue;
        }
        if (ll - previous).abs() <= config.tol * ll.abs().max(f64::MIN_POSITIVE) {
            report.converged = true;
            break;
        }
    }
    Ok((mixture, report))
}

fn renormalize(weights: &mut [f64]) {
    let total: f64 = weights.iter().sum();
    for w in weights.iter_mut() {
        *w /= total;
    }
}

fn e_step(poses: &[Pose3D], mixture: &MixtureModel) -> (Vec<Vec<f64>>, f64) {
    let mut ll = 0.0;
    let resp = poses
        .iter()
        .map(|p| {
            let lj = mixture.component_log_joint(p);
            let norm = log_sum_exp(&lj);
            ll += norm;
            lj.iter().map(|v| (v - norm).exp()).collect()
        })
        .collect();
    (resp, ll)
}

/// Exemplar search and EM settings for [`train_mixture`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MixtureConfig {
    pub k_max: usize,
    pub stride: usize,
    /// Multiple of the median pairwise subsample distance.
    pub min_separation_factor: f64,
    pub em: EmConfig,
}

impl Default for MixtureConfig {
    fn default() -> Self {
        Self {
            k_max: 3,
            stride: 64,
            min_separation_factor: 0.4,
            em: EmConfig::default(),
        }
    }
}

/// Subsample, pick exemplars and run EM on aligned poses.
pub fn train_mixture(
    aligned: &[Pose3D],
    j: usize,
    config: &MixtureConfig,
) -> Result<(MixtureModel, ExemplarSet, EmReport), MixtureError> {
    if aligned.is_empty() {
        return Err(MixtureError::EmptyDataset);
    }
    let sub = subsample(aligned, config.stride);
    let min_sep = default_min_separation(&sub, config.min_separation_factor);
    let exemplars = select_exemplars(&sub, config.k_max, min_sep)?;
    let centers: Vec<Pose3D> = exemplars.indices.iter().map(|&i| sub[i].clone()).collect();
    let (mixture, report) = train_mppca(aligned, &centers, j, &config.em)?;
    Ok((mixture, exemplars, report))
}
