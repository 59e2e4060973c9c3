//! Monocular feature-based visual odometry toolkit.
//!
//! The pipeline detects grid-aligned salient keypoints, fuses coarse and
//! fine dense features into per-keypoint descriptors, matches them with a
//! transformer-style assignment (or classical mutual nearest neighbors),
//! and estimates relative pose with a confidence-weighted eight-point
//! solver. Trajectories are assembled keyframe-to-frame and evaluated with
//! ATE and KITTI-style drift metrics.

pub mod detector;
pub mod descriptor;
pub mod error;
pub mod eval;
pub mod fmap;
pub mod geometry;
pub mod image;
pub mod io;
pub mod matcher;
pub mod numeric;
pub mod pipeline;
pub mod pose;
pub mod supervision;
pub mod synth;

pub use error::{Error, Result};
