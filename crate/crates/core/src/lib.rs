//! Probabilistic 3D human pose models and 2D-to-3D lifting.
//!
//! The crate trains ground-plane-rotation aligned probabilistic PCA models of
//! 3D pose (single Gaussian or mixture), lifts 2D landmarks to 3D by a
//! quantized search over the ground-plane rotation with a closed-form inner
//! least-squares solve, and provides the belief-map projection and fusion
//! loop used to refine 2D landmark estimates.
//!
//! Everything here is `no_std` + `alloc`. File formats, configuration and the
//! command line live in the `liftpose` crate.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod align;
pub mod beliefmap;
mod linalg;
pub mod lift;
pub mod metrics;
pub mod mixture;
pub mod preprocess;
pub mod simulate;
pub mod skeleton;

pub use align::{GaussianPoseModel, PriorForm};
pub use beliefmap::BeliefStack;
pub use lift::{LiftConfig, LiftResult, Lifter};
pub use mixture::MixtureModel;
pub use skeleton::{CameraModel, PlanarRotation, Pose2D, Pose3D, SkeletonTopology};
