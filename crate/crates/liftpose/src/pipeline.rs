//! Model training from raw 3D poses.

use liftpose_core::align::{train_aligned_model, AlignError, TrainReport};
use liftpose_core::mixture::{train_mixture, EmReport, MixtureError};
use liftpose_core::preprocess::{build_training_set, PreprocessError};
use liftpose_core::{MixtureModel, Pose3D, PriorForm, SkeletonTopology};
use thiserror::Error;

use crate::config::TrainSection;
use crate::model_file::{ModelFile, TrainingMeta};
use crate::topology::TopologyFile;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Preprocess(#[from] PreprocessError),
    #[error(transparent)]
    Align(#[from] AlignError),
    #[error(transparent)]
    Mixture(#[from] MixtureError),
}

#[derive(Debug, Clone)]
pub struct TrainSummary {
    pub samples: usize,
    pub alignment: TrainReport,
    pub em: Option<EmReport>,
}

/// Normalizes (and optionally mirrors) the poses, trains the rotation-aligned
/// model and, for `k > 1`, a mixture on the aligned poses.
pub fn train_model(
    poses: &[Pose3D],
    topology: &SkeletonTopology,
    topology_file: &TopologyFile,
    cfg: &TrainSection,
    seed: u64,
) -> Result<(ModelFile, TrainSummary), TrainError> {
    let set = build_training_set(poses, topology, cfg.augment)?;
    let prior = PriorForm::from(cfg.regularizer);
    let (model, state, alignment) = train_aligned_model(&set, cfg.j, &cfg.schedule(), prior)?;
    let (mixture, em) = if cfg.k <= 1 {
        (MixtureModel::single(model), None)
    } else {
        let aligned: Vec<Pose3D> = set
            .iter()
            .zip(&state.rotations)
            .map(|(p, r)| r.inverse().apply(p))
            .collect();
        let (mixture, _, report) = train_mixture(&aligned, cfg.j, &cfg.mixture())?;
        (mixture, Some(report))
    };
    let meta = TrainingMeta {
        j: cfg.j,
        k: mixture.len(),
        schedule: cfg.schedule().into(),
        seed,
        regularizer_mode: cfg.regularizer,
    };
    Ok((
        ModelFile::new(topology_file.clone(), mixture, meta),
        TrainSummary {
            samples: set.len(),
            alignment,
            em,
        },
    ))
}
