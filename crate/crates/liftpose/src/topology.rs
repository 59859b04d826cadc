//! Topology JSON files.

use std::fs;
use std::path::Path;

use liftpose_core::skeleton::TopologyError;
use liftpose_core::SkeletonTopology;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TopologyFileError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}: {source}")]
    Json { path: String, source: serde_json::Error },
    #[error("parent index {0} is neither -1 nor a joint index")]
    Parent(i64),
    #[error("evaluation subset index {0} out of range")]
    Subset(usize),
    #[error(transparent)]
    Invalid(#[from] TopologyError),
}

/// On-disk topology: parents use `-1` for the root.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopologyFile {
    pub joints: Vec<String>,
    pub parents: Vec<i64>,
    pub lr_pairs: Vec<[usize; 2]>,
    pub root: usize,
    /// Joints used by the aligned error metric.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eval_subset: Option<Vec<usize>>,
}

impl TopologyFile {
    pub fn from_topology(t: &SkeletonTopology, eval_subset: Option<Vec<usize>>) -> Self {
        Self {
            joints: t.joint_names().to_vec(),
            parents: t.parents().iter().map(|p| p.map_or(-1, |p| p as i64)).collect(),
            lr_pairs: t.lr_pairs().iter().map(|&(a, b)| [a, b]).collect(),
            root: t.root(),
            eval_subset,
        }
    }

    pub fn h36m17() -> Self {
        Self::from_topology(&SkeletonTopology::h36m17(), Some(SkeletonTopology::h36m_eval_subset()))
    }

    pub fn topology(&self) -> Result<SkeletonTopology, TopologyFileError> {
        let parents = self
            .parents
            .iter()
            .map(|&p| match p {
                -1 => Ok(None),
                p if p >= 0 => Ok(Some(p as usize)),
                p => Err(TopologyFileError::Parent(p)),
            })
            .collect::<Result<Vec<_>, _>>()?;
        let pairs = self.lr_pairs.iter().map(|p| (p[0], p[1])).collect();
        let t = SkeletonTopology::new(self.joints.clone(), parents, pairs, self.root)?;
        if let Some(&i) = self.eval_subset.iter().flatten().find(|&&i| i >= t.num_joints()) {
            return Err(TopologyFileError::Subset(i));
        }
        Ok(t)
    }

    /// The configured subset, or every joint.
    pub fn subset(&self) -> Vec<usize> {
        self.eval_subset.clone().unwrap_or_else(|| (0..self.joints.len()).collect())
    }
}

pub fn load_topology(path: &Path) -> Result<(SkeletonTopology, TopologyFile), TopologyFileError> {
    let name = path.display().to_string();
    let text = fs::read_to_string(path).map_err(|source| TopologyFileError::Io {
        path: name.clone(),
        source,
    })?;
    let file: TopologyFile = serde_json::from_str(&text).map_err(|source| TopologyFileError::Json { path: name, source })?;
    Ok((file.topology()?, file))
}

pub fn save_topology(path: &Path, file: &TopologyFile) -> Result<(), TopologyFileError> {
    let text = serde_json::to_string_pretty(file).expect("topology serializes");
    fs::write(path, text + "\n").map_err(|source| TopologyFileError::Io {
        path: path.display().to_string(),
        source,
    })
}
