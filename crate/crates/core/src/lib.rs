//! Geometric-consistency engine for joint depth, camera-motion and optical-flow
//! estimation.
//!
//! The crate is `no_std` (with `alloc`). It contains:
//!
//! * [`geometry`]: pinhole projection, SE(3) poses and rigid-flow synthesis,
//! * [`sampling`]: bilinear sampling, inverse warping and 2×2 pyramids,
//! * [`masks`]: forward-backward consistency checks,
//! * [`losses`]: census photometric, edge-aware smoothness, forward-backward
//!   and cross-task losses, each with analytic gradients, and the assembled
//!   multi-scale objective,
//! * [`optimizer`]: Adam-driven direct refinement of depth, pose and flow,
//! * [`scene`]: procedural textured-plane scenes with exact ground truth,
//! * [`metrics`]: flow (EPE, F1) and depth error/accuracy metrics.
//!
//! Pixel centers sit at integer coordinates: pixel `(0, 0)` is the point
//! `(0.0, 0.0)`.
//!
//! With the `parallel` feature, per-pixel maps run on the rayon pool. Every
//! reduction is sequential and ordered, so results are bit-identical for any
//! thread count.
#![no_std]
#![forbid(unsafe_code)]

extern crate alloc;

pub mod error;
pub mod field;
pub mod geometry;
pub mod losses;
pub mod masks;
pub mod metrics;
pub mod optimizer;
mod par;
pub mod sampling;
pub mod scene;

pub use error::{Error, Result};
pub use field::{DepthMap, FlowField, ImageBuffer, ValidMask};
pub use geometry::{Intrinsics, Mat3, PoseParams, PoseSE3, Vec3};
pub use losses::{CensusParams, LossReport, LossWeights};
pub use masks::FBCheckParams;
pub use optimizer::{OptimizerConfig, SceneState};
pub use scene::{GroundTruth, SceneSpec};
