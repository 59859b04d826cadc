//! TOML configuration with `[train]`, `[lift]` and `[sim]` tables. Every
//! field is optional.

use std::fs;
use std::path::Path;

use liftpose_core::align::GrowthSchedule;
use liftpose_core::beliefmap::FusionWeight;
use liftpose_core::lift::SelectionRule;
use liftpose_core::mixture::{CollapsePolicy, EmConfig, MixtureConfig};
use liftpose_core::simulate::{NoiseModel, SimConfig};
use liftpose_core::{CameraModel, LiftConfig, PriorForm};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model_file::RegularizerMode;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}: {source}")]
    Toml { path: String, source: toml::de::Error },
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub train: TrainSection,
    pub lift: LiftSection,
    pub sim: SimSection,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CollapseMode {
    Remove,
    Fail,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub j: usize,
    pub k: usize,
    pub augment: bool,
    pub regularizer: RegularizerMode,
    pub rounds_per_step: usize,
    pub max_rounds: usize,
    pub tol: f64,
    pub stride: usize,
    pub min_separation_factor: f64,
    pub em_tol: f64,
    pub em_max_iters: usize,
    pub collapse: CollapseMode,
}

impl Default for TrainSection {
    fn default() -> Self {
        let s = GrowthSchedule::default();
        let m = MixtureConfig::default();
        Self {
            j: 10,
            k: 1,
            augment: true,
            regularizer: RegularizerMode::GaussianPrior,
            rounds_per_step: s.rounds_per_step,
            max_rounds: s.max_rounds,
            tol: s.tol,
            stride: m.stride,
            min_separation_factor: m.min_separation_factor,
            em_tol: m.em.tol,
            em_max_iters: m.em.max_iters,
            collapse: CollapseMode::Remove,
        }
    }
}

impl TrainSection {
    pub fn schedule(&self) -> GrowthSchedule {
        GrowthSchedule {
            rounds_per_step: self.rounds_per_step,
            max_rounds: self.max_rounds,
            tol: self.tol,
        }
    }

    pub fn mixture(&self) -> MixtureConfig {
        MixtureConfig {
            k_max: self.k,
            stride: self.stride,
            min_separation_factor: self.min_separation_factor,
            em: EmConfig {
                tol: self.em_tol,
                max_iters: self.em_max_iters,
                collapse: match self.collapse {
                    CollapseMode::Remove => CollapsePolicy::Remove,
                    CollapseMode::Fail => CollapsePolicy::Fail,
                },
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CameraPreset {
    /// Image axes: u right, v down, depth away from the viewer.
    Image,
    Identity,
}

impl CameraPreset {
    pub fn camera(self) -> CameraModel {
        match self {
            CameraPreset::Image => CameraModel::image(),
            CameraPreset::Identity => CameraModel::identity(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionMode {
    Penalized,
    RawCost,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LiftSection {
    pub grid_n: usize,
    pub refine: bool,
    pub lambda_scale: f64,
    pub regularizer: RegularizerMode,
    pub selection: SelectionMode,
    pub camera: CameraPreset,
}

impl Default for LiftSection {
    fn default() -> Self {
        let d = LiftConfig::default();
        Self {
            grid_n: d.grid_n,
            refine: d.refine,
            lambda_scale: d.lambda_scale,
            regularizer: d.prior.into(),
            selection: SelectionMode::Penalized,
            camera: CameraPreset::Image,
        }
    }
}

impl LiftSection {
    pub fn lift_config(&self) -> LiftConfig {
        LiftConfig {
            grid_n: self.grid_n,
            refine: self.refine,
            prior: PriorForm::from(self.regularizer),
            lambda_scale: self.lambda_scale,
            selection: match self.selection {
                SelectionMode::Penalized => SelectionRule::Penalized,
                SelectionMode::RawCost => SelectionRule::RawCost,
            },
            ..LiftConfig::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimSection {
    pub stages: usize,
    pub jitter_std: f64,
    pub outlier_prob: f64,
    pub outlier_px: f64,
    /// One weight per stage; a single value is repeated.
    pub fusion_weights: Vec<f64>,
    pub fit_weights: bool,
    pub width: usize,
    pub height: usize,
    pub blur: f64,
    pub pixel_scale: f64,
    pub component: Option<usize>,
}

impl Default for SimSection {
    fn default() -> Self {
        let d = SimConfig::default();
        Self {
            stages: d.stages,
            jitter_std: d.noise.jitter_std,
            outlier_prob: d.noise.outlier_prob,
            outlier_px: d.noise.outlier_px,
            fusion_weights: vec![d.fusion_weights[0].value()],
            fit_weights: false,
            width: d.width,
            height: d.height,
            blur: d.blur,
            pixel_scale: d.pixel_scale,
            component: d.component,
        }
    }
}

impl SimSection {
    pub fn sim_config(&self, seed: u64) -> Result<SimConfig, ConfigError> {
        let weights = match self.fusion_weights.len() {
            1 => vec![self.fusion_weights[0]; self.stages],
            n if n == self.stages => self.fusion_weights.clone(),
            n => {
                return Err(ConfigError::Invalid(format!(
                    "sim.fusion_weights has {n} entries for {} stages",
                    self.stages
                )))
            }
        };
        let fusion_weights = weights
            .into_iter()
            .map(FusionWeight::new)
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| ConfigError::Invalid(format!("sim.fusion_weights: {e}")))?;
        let sim = SimConfig {
            stages: self.stages,
            noise: NoiseModel {
                jitter_std: self.jitter_std,
                outlier_prob: self.outlier_prob,
                outlier_px: self.outlier_px,
            },
            fusion_weights,
            seed,
            width: self.width,
            height: self.height,
            blur: self.blur,
            pixel_scale: self.pixel_scale,
            component: self.component,
        };
        sim.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(sim)
    }
}

impl Config {
    pub fn parse(text: &str, path: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|source| ConfigError::Toml {
            path: path.to_string(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let name = path.display().to_string();
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: name.clone(),
            source,
        })?;
        Self::parse(&text, &name)
    }
}
