//! File formats, configuration, evaluation protocols and the training
//! pipeline around `liftpose-core`.

pub mod bmap;
pub mod config;
pub mod dataset;
pub mod model_file;
pub mod pipeline;
pub mod protocol;
pub mod report;
pub mod topology;

pub use liftpose_core as core;
