//! Binary model container.
//!
//! Layout: magic `PLIFTMDL`, little-endian `u32` version, `u32` header length,
//! a JSON header with the topology, training metadata and array shapes, then
//! for every component the little-endian `f64` blocks `weight`, `noise_var`,
//! `mean` (3×L row-major), `basis` (J×3×L) and `sigma` (J).

use std::fs;
use std::path::Path;

use liftpose_core::align::{GrowthSchedule, ModelError};
use liftpose_core::mixture::MixtureError;
use liftpose_core::{GaussianPoseModel, MixtureModel, Pose3D, PriorForm, SkeletonTopology};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::topology::{TopologyFile, TopologyFileError};

pub const MAGIC: &[u8; 8] = b"PLIFTMDL";
pub const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ModelFileError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("not a model file: {0}")]
    Format(String),
    #[error("unsupported model file version {found} (expected {VERSION})")]
    VersionMismatch { found: u32 },
    #[error("invariant violated: {0}")]
    InvariantViolation(String),
}

impl From<ModelError> for ModelFileError {
    fn from(e: ModelError) -> Self {
        ModelFileError::InvariantViolation(e.to_string())
    }
}

impl From<MixtureError> for ModelFileError {
    fn from(e: MixtureError) -> Self {
        ModelFileError::InvariantViolation(e.to_string())
    }
}

impl From<TopologyFileError> for ModelFileError {
    fn from(e: TopologyFileError) -> Self {
        ModelFileError::InvariantViolation(format!("topology: {e}"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegularizerMode {
    GaussianPrior,
    LiteralPaper,
}

impl From<PriorForm> for RegularizerMode {
    fn from(p: PriorForm) -> Self {
        match p {
            PriorForm::GaussianPrior => RegularizerMode::GaussianPrior,
            PriorForm::LiteralPaper => RegularizerMode::LiteralPaper,
        }
    }
}

impl From<RegularizerMode> for PriorForm {
    fn from(p: RegularizerMode) -> Self {
        match p {
            RegularizerMode::GaussianPrior => PriorForm::GaussianPrior,
            RegularizerMode::LiteralPaper => PriorForm::LiteralPaper,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleMeta {
    pub rounds_per_step: usize,
    pub max_rounds: usize,
    pub tol: f64,
}

impl From<GrowthSchedule> for ScheduleMeta {
    fn from(s: GrowthSchedule) -> Self {
        Self {
            rounds_per_step: s.rounds_per_step,
            max_rounds: s.max_rounds,
            tol: s.tol,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub j: usize,
    pub k: usize,
    pub schedule: ScheduleMeta,
    pub seed: u64,
    pub regularizer_mode: RegularizerMode,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelFile {
    pub version: u32,
    pub topology: TopologyFile,
    pub mixture: MixtureModel,
    pub training_meta: TrainingMeta,
}

#[derive(Serialize, Deserialize)]
struct ComponentShape {
    joints: usize,
    basis_size: usize,
}

#[derive(Serialize, Deserialize)]
struct Header {
    topology: TopologyFile,
    training_meta: TrainingMeta,
    components: Vec<ComponentShape>,
}

impl ModelFile {
    pub fn new(topology: TopologyFile, mixture: MixtureModel, training_meta: TrainingMeta) -> Self {
        Self {
            version: VERSION,
            topology,
            mixture,
            training_meta,
        }
    }

    pub fn skeleton(&self) -> SkeletonTopology {
        self.topology.topology().expect("validated on load")
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = Header {
            topology: self.topology.clone(),
            training_meta: self.training_meta.clone(),
            components: self
                .mixture
                .components()
                .iter()
                .map(|c| ComponentShape {
                    joints: c.num_joints(),
                    basis_size: c.basis_size(),
                })
                .collect(),
        };
        let json = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&self.version.to_le_bytes());
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        let mut put = |v: f64| out.extend_from_slice(&v.to_le_bytes());
        for (c, w) in self.mixture.components().iter().zip(self.mixture.weights()) {
            put(*w);
            put(c.noise_var());
            let l = c.num_joints();
            for r in 0..3 {
                for jt in 0..l {
                    put(c.mean()[(r, jt)]);
                }
            }
            for j in 0..c.basis_size() {
                let e = c.basis_pose(j);
                for r in 0..3 {
                    for jt in 0..l {
                        put(e[(r, jt)]);
                    }
                }
            }
            for s in c.sigma() {
                put(*s);
            }
        }
        out
    }

    /// Parses and re-validates every model invariant.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ModelFileError> {
        let mut cur = Cursor { bytes, pos: 0 };
        if cur.take(8)? != MAGIC {
            return Err(ModelFileError::Format("bad magic".into()));
        }
        let version = cur.u32()?;
        if version != VERSION {
            return Err(ModelFileError::VersionMismatch { found: version });
        }
        let len = cur.u32()? as usize;
        let header: Header =
            serde_json::from_slice(cur.take(len)?).map_err(|e| ModelFileError::Format(format!("header: {e}")))?;
        let skeleton = header.topology.topology()?;
        let mut components = Vec::new();
        let mut weights = Vec::new();
        for (k, shape) in header.components.iter().enumerate() {
            if shape.joints != skeleton.num_joints() {
                return Err(ModelFileError::InvariantViolation(format!(
                    "component {k} has {} joints, topology has {}",
                    shape.joints,
                    skeleton.num_joints()
                )));
            }
            let (l, j) = (shape.joints, shape.basis_size);
            weights.push(cur.f64()?);
            let noise_var = cur.f64()?;
            let mut mean = Pose3D::zeros(l);
            for r in 0..3 {
                for jt in 0..l {
                    mean[(r, jt)] = cur.f64()?;
                }
            }
            let mut basis = DMatrix::zeros(3 * l, j);
            for col in 0..j {
                for r in 0..3 {
                    for jt in 0..l {
                        basis[(3 * jt + r, col)] = cur.f64()?;
                    }
                }
            }
            let sigma = (0..j).map(|_| cur.f64()).collect::<Result<Vec<_>, _>>()?;
            let model = GaussianPoseModel::new(mean, basis, sigma, noise_var)
                .map_err(|e| ModelFileError::InvariantViolation(format!("component {k}: {e}")))?;
            model
                .check_centered()
                .map_err(|e| ModelFileError::InvariantViolation(format!("component {k}: {e}")))?;
            components.push(model);
        }
        if cur.pos != bytes.len() {
            return Err(ModelFileError::Format("trailing bytes".into()));
        }
        if header.training_meta.k != components.len() {
            return Err(ModelFileError::InvariantViolation(format!(
                "metadata records {} components, file holds {}",
                header.training_meta.k,
                components.len()
            )));
        }
        Ok(Self {
            version,
            topology: header.topology,
            mixture: MixtureModel::new(components, weights)?,
            training_meta: header.training_meta,
        })
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], ModelFileError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| ModelFileError::Format("truncated file".into()))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32, ModelFileError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64, ModelFileError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn save_model(path: &Path, model: &ModelFile) -> Result<(), ModelFileError> {
    fs::write(path, model.to_bytes()).map_err(|source| ModelFileError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn load_model(path: &Path) -> Result<ModelFile, ModelFileError> {
    let bytes = fs::read(path).map_err(|source| ModelFileError::Io {
        path: path.display().to_string(),
        source,
    })?;
    ModelFile::from_bytes(&bytes)
}
