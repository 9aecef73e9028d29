//! Robust model scoring for two-view geometry.
//!
//! The crate implements the family of additive RANSAC scoring functions
//! (RANSAC, MSAC, Gaussian-uniform marginal/profile, MAGSAC++ and learned
//! tables), the EM/IRLS local optimization schemes they induce, a synthetic
//! scene generator following the Gaussian-inlier / uniform-outlier model, and
//! the histogram-based threshold validation methodology.
//!
//! Modules are layered bottom-up:
//!
//! * [`geometry`]: models, Sampson residuals, poses and pose errors.
//! * [`distributions`]: incomplete gamma, chi and scale-marginalized densities.
//! * [`scoring`]: normalized residual scores, posteriors, IRLS weights and
//!   the histogram scoring engine.
//! * [`synth`]: scenes, minimal solvers, candidate pools, perturbations.
//! * [`localopt`]: IRLS / Levenberg-Marquardt refinement.
//! * [`learnscore`]: monotone inlier density learning.
//! * [`eval`]: error grids, validation sweeps, sensitivity and the
//!   consistency / selectivity experiments.
//! * [`io`]: CSV / JSON formats.

// NaN-rejecting range checks are written as `!(x > lo)`.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod distributions;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod io;
pub mod learnscore;
pub mod localopt;
pub mod rng;
pub mod scoring;
pub mod synth;

pub use error::{Error, Result};
pub use geometry::{
    pose_error, Correspondence, CorrespondenceSet, GeometricModel, ModelKind, Pose, PoseError,
    ResidualVector,
};
pub use scoring::{ResidualHistogram, ScoreFamily, ScoreSpec, ScoreTable};
pub use synth::{ModelPool, Provenance, SceneConfig, SyntheticScene};
