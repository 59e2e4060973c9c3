//! Frame-to-keyframe visual odometry loop: matching against the latest
//! keyframe, pose solving, keyframe promotion on mean pixel displacement,
//! and trajectory assembly.

use nalgebra::Vector2;

use crate::detector::{DetectorConfig, KeypointSet};
use crate::descriptor::DescriptorSet;
use crate::error::{Error, Result};
use crate::geometry::{CameraIntrinsics, Pose};
use crate::matcher::{self, MatchSet, MatcherWeights};
use crate::pose::{estimate_relative_pose_robust, CorrespondenceSet, RansacOptions};

/// Descriptor source for the pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provider {
    /// Classical gradient/intensity dense maps computed from the image.
    Classical,
    /// Feature maps or descriptors supplied per frame (files or direct).
    Precomputed,
}

/// Matching backend.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Backend {
    MutualNn,
    Attention,
}

/// Translation magnitude source for the monocular scale ambiguity.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScaleSource {
    GroundTruth,
    Unit,
}

#[derive(Debug, Clone)]
pub struct PipelineConfig {
    /// Mean-displacement keyframe threshold, pixels.
    pub keyframe_threshold: f64,
    /// Process every `stride`-th frame of the input sequence.
    pub stride: usize,
    pub intrinsics: CameraIntrinsics,
    pub detector: DetectorConfig,
    pub provider: Provider,
    pub backend: Backend,
    pub scale_source: ScaleSource,
    /// Mutual-argmax / mutual-NN acceptance threshold.
    pub match_threshold: f64,
    /// Below this many matches the frame is marked untracked.
    pub min_matches: usize,
    /// RANSAC hypotheses for the pose solve; 0 disables outlier rejection.
    pub ransac_iterations: usize,
    /// Sampson inlier gate for RANSAC, in pixels.
    pub ransac_threshold_px: f64,
}

impl PipelineConfig {
    pub fn new(intrinsics: CameraIntrinsics) -> Self {
        PipelineConfig {
            keyframe_threshold: 24.0,
            stride: 1,
            intrinsics,
            detector: DetectorConfig::default(),
            provider: Provider::Classical,
            backend: Backend::MutualNn,
            scale_source: ScaleSource::GroundTruth,
            match_threshold: 0.2,
            min_matches: 8,
            ransac_iterations: 192,
            ransac_threshold_px: 1.5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.keyframe_threshold <= 0.0 {
            return Err(Error::invalid("keyframe threshold must be > 0"));
        }
        if self.stride == 0 {
            return Err(Error::invalid("stride must be >= 1"));
        }
        if self.min_matches < 8 {
            return Err(Error::invalid("min_matches must be >= 8 for the pose solver"));
        }
        if self.ransac_threshold_px <= 0.0 {
            return Err(Error::invalid("ransac threshold must be > 0 px"));
        }
        self.detector.validate()
    }
}

#[derive(Debug, Clone)]
pub struct TrajectoryEntry {
    pub frame_id: u64,
    pub timestamp: f64,
    pub pose: Pose,
    pub keyframe: bool,
    pub tracked: bool,
}

/// Camera-to-world poses, one entry per processed frame.
#[derive(Debug, Clone, Default)]
pub struct Trajectory {
    pub entries: Vec<TrajectoryEntry>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn push(&mut self, entry: TrajectoryEntry) -> Result<()> {
        if let Some(last) = self.entries.last() {
            if entry.frame_id <= last.frame_id {
                return Err(Error::invalid(format!(
                    "frame ids must be strictly increasing ({} after {})",
                    entry.frame_id, last.frame_id
                )));
            }
        }
        self.entries.push(entry);
        Ok(())
    }
}

/// Keypoints plus fused descriptors for one frame.
#[derive(Debug, Clone)]
pub struct FrameFeatures {
    pub keypoints: KeypointSet,
    pub descriptors: DescriptorSet,
}

/// Arithmetic mean of the Euclidean pixel displacement over matched pairs.
pub fn mean_displacement(m: &MatchSet, kp_a: &KeypointSet, kp_b: &KeypointSet) -> Result<f64> {
    if m.is_empty() {
        return Err(Error::invalid("mean displacement of an empty match set"));
    }
    let total: f64 = m
        .pairs
        .iter()
        .map(|p| {
            let (ua, va) = kp_a.pixel(p.a);
            let (ub, vb) = kp_b.pixel(p.b);
            ((ua - ub).powi(2) + (va - vb).powi(2)).sqrt()
        })
        .sum();
    Ok(total / m.len() as f64)
}

/// Re-scales the unit translation direction to the ground-truth magnitude.
pub fn scale_translation(pose: &crate::pose::RelativePose, gt_rel: &Pose) -> Pose {
    pose.to_pose(gt_rel.translation.norm())
}

struct KeyframeState {
    features: FrameFeatures,
    /// Absolute (camera-to-world) pose of the keyframe.
    abs: Pose,
    /// Ground-truth absolute pose of the keyframe, when provided.
    gt_abs: Option<Pose>,
}

/// Single-writer VO state machine; `step` calls are strictly ordered.
pub struct VoEngine {
    pub config: PipelineConfig,
    matcher_weights: Option<MatcherWeights>,
    keyframe: Option<KeyframeState>,
    pub trajectory: Trajectory,
}

impl VoEngine {
    pub fn new(config: PipelineConfig, matcher_weights: Option<MatcherWeights>) -> Result<Self> {
        config.validate()?;
        if config.backend == Backend::Attention && matcher_weights.is_none() {
            return Err(Error::invalid("attention backend requires matcher weights"));
        }
        Ok(VoEngine {
            config,
            matcher_weights,
            keyframe: None,
            trajectory: Trajectory::default(),
        })
    }

    fn match_features(&self, a: &FrameFeatures, b: &FrameFeatures) -> Result<MatchSet> {
        match self.config.backend {
            Backend::MutualNn => {
                matcher::match_mutual_nn(&a.descriptors, &b.descriptors, self.config.match_threshold)
            }
            Backend::Attention => {
                let w = self.matcher_weights.as_ref().unwrap();
                let (fa, fb) = matcher::attend(&a.descriptors, &b.descriptors, w)?;
                let assign = matcher::assignment(&fa, &fb, w)?;
                Ok(matcher::extract_matches(
                    &assign,
                    &fa,
                    &fb,
                    w,
                    self.config.match_threshold,
                ))
            }
        }
    }

    fn solve_relative(
        &self,
        matches: &MatchSet,
        kp_a: &KeypointSet,
        kp_b: &KeypointSet,
    ) -> Result<crate::pose::RelativePose> {
        let k = &self.config.intrinsics;
        let mut a = Vec::with_capacity(matches.len());
        let mut b = Vec::with_capacity(matches.len());
        let mut w = Vec::with_capacity(matches.len());
        for m in &matches.pairs {
            let (ua, va) = kp_a.pixel(m.a);
            let (ub, vb) = kp_b.pixel(m.b);
            a.push(k.calibrate(&Vector2::new(ua, va)));
            b.push(k.calibrate(&Vector2::new(ub, vb)));
            w.push(m.weight);
        }
        let c = CorrespondenceSet::new(a, b, w)?;
        let opts = RansacOptions {
            iterations: self.config.ransac_iterations,
            inlier_threshold: self.config.ransac_threshold_px / (0.5 * (k.fx + k.fy)),
            ..Default::default()
        };
        Ok(estimate_relative_pose_robust(&c, &opts)?.0)
    }

    /// Processes one frame. The first call seeds the identity keyframe;
    /// later calls match against the latest keyframe, solve the relative
    /// pose, apply ground-truth (or unit) translation scale, and promote
    /// the frame to keyframe when the mean displacement exceeds the
    /// threshold. Frames with too few matches or a degenerate solve hold
    /// the previous pose and are flagged untracked.
    pub fn step(
        &mut self,
        frame_id: u64,
        timestamp: f64,
        features: FrameFeatures,
        gt_abs: Option<&Pose>,
    ) -> Result<&TrajectoryEntry> {
        if features.keypoints.len() != features.descriptors.len() {
            return Err(Error::ShapeMismatch {
                expected: format!("{} descriptors", features.keypoints.len()),
                got: format!("{}", features.descriptors.len()),
            });
        }
        let entry = match &self.keyframe {
            None => {
                self.keyframe = Some(KeyframeState {
                    features,
                    abs: Pose::identity(),
                    gt_abs: gt_abs.cloned(),
                });
                TrajectoryEntry {
                    frame_id,
                    timestamp,
                    pose: Pose::identity(),
                    keyframe: true,
                    tracked: true,
                }
            }
            Some(kf) => {
                let matches = self.match_features(&kf.features, &features)?;
                if matches.len() < self.config.min_matches {
                    // tracking lost: hold the pose and re-seed the keyframe
                    // here so the next frame can re-acquire
                    let held = self
                        .trajectory
                        .entries
                        .last()
                        .map(|e| e.pose.clone())
                        .unwrap_or_else(Pose::identity);
                    self.keyframe = Some(KeyframeState {
                        features,
                        abs: held.clone(),
                        gt_abs: gt_abs.cloned(),
                    });
                    TrajectoryEntry {
                        frame_id,
                        timestamp,
                        pose: held,
                        keyframe: true,
                        tracked: false,
                    }
                } else {
                    let disp =
                        mean_displacement(&matches, &kf.features.keypoints, &features.keypoints)?;
                    let scale = match (self.config.scale_source, &kf.gt_abs, gt_abs) {
                        (ScaleSource::GroundTruth, Some(kf_gt), Some(cur_gt)) => {
                            kf_gt.inverse().compose(cur_gt).translation.norm()
                        }
                        (ScaleSource::GroundTruth, _, _) => {
                            return Err(Error::invalid(
                                "ground-truth scaling requested but no ground-truth pose supplied",
                            ))
                        }
                        (ScaleSource::Unit, _, _) => 1.0,
                    };
                    // a repeated static frame matches itself exactly; the
                    // epipolar system is then degenerate by construction
                    let rel = if disp < 1e-12 {
                        Pose::identity()
                    } else {
                        match self.solve_relative(&matches, &kf.features.keypoints, &features.keypoints) {
                            // solver yields frame-from-keyframe; invert to
                            // keyframe-from-frame before composing
                            Ok(rp) => rp.to_pose(scale).inverse(),
                            Err(Error::DegenerateGeometry(_)) => {
                                let held = self
                                    .trajectory
                                    .entries
                                    .last()
                                    .map(|e| e.pose.clone())
                                    .unwrap_or_else(Pose::identity);
                                self.keyframe = Some(KeyframeState {
                                    features,
                                    abs: held.clone(),
                                    gt_abs: gt_abs.cloned(),
                                });
                                let entry = TrajectoryEntry {
                                    frame_id,
                                    timestamp,
                                    pose: held,
                                    keyframe: true,
                                    tracked: false,
                                };
                                self.trajectory.push(entry)?;
                                return Ok(self.trajectory.entries.last().unwrap());
                            }
                            Err(e) => return Err(e),
                        }
                    };
                    let abs = kf.abs.compose(&rel);
                    let promote = disp > self.config.keyframe_threshold;
                    if promote {
                        self.keyframe = Some(KeyframeState {
                            features,
                            abs: abs.clone(),
                            gt_abs: gt_abs.cloned(),
                        });
                    }
                    TrajectoryEntry {
                        frame_id,
                        timestamp,
                        pose: abs,
                        keyframe: promote,
                        tracked: true,
                    }
                }
            }
        };
        self.trajectory.push(entry)?;
        Ok(self.trajectory.entries.last().unwrap())
    }

    pub fn trajectory(&self) -> &Trajectory {
        &self.trajectory
    }
}
