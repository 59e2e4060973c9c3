//! Training-style objectives evaluated at inference time: ground-truth
//! correspondence labeling from depth + relative pose, the per-layer match
//! loss, and the up-to-scale pose loss.

use nalgebra::Vector2;

use crate::detector::KeypointSet;
use crate::error::{Error, Result};
use crate::fmap::Tensor;
use crate::geometry::{CameraIntrinsics, Pose};
use crate::matcher::AssignmentMatrix;
use crate::pose::RelativePose;

const PROB_CLAMP: f64 = 1e-12;

/// Ground-truth labels: matched index pairs plus per-side unmatchable sets.
/// Keypoints with missing depth appear in neither (ignored).
#[derive(Debug, Clone, Default)]
pub struct MatchLabels {
    pub matched: Vec<(usize, usize)>,
    pub unmatchable_a: Vec<usize>,
    pub unmatchable_b: Vec<usize>,
}

impl MatchLabels {
    pub fn is_empty(&self) -> bool {
        self.matched.is_empty() && self.unmatchable_a.is_empty() && self.unmatchable_b.is_empty()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LossConfig {
    pub lambda_t: f64,
    pub lambda_r: f64,
    pub lambda_p: f64,
    pub epsilon: f64,
    /// Compare rotations by relative geodesic angle instead of the
    /// difference of axis-angle vectors.
    pub rotation_geodesic: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            lambda_t: 400.0,
            lambda_r: 180.0,
            lambda_p: 0.0,
            epsilon: 1e-6,
            rotation_geodesic: false,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lambda_t < 0.0 || self.lambda_r < 0.0 {
            return Err(Error::invalid("lambda_t and lambda_r must be >= 0"));
        }
        if !(0.0..=1.0).contains(&self.lambda_p) {
            return Err(Error::invalid("lambda_p must lie in [0, 1]"));
        }
        if self.epsilon <= 0.0 {
            return Err(Error::invalid("epsilon must be > 0"));
        }
        Ok(())
    }
}

/// Default reprojection tolerance for labeling, pixels.
pub const DEFAULT_REPROJ_TOL: f64 = 3.0;

/// Labels frame-t keypoints by unprojecting with depth, transforming with
/// the relative pose (frame t+1 from frame t), reprojecting, and matching
/// to the nearest frame-(t+1) keypoint within `reproj_tol` pixels. Pairing
/// is greedy by reprojection distance so each keypoint is used at most once
/// per side.
pub fn gt_correspondences(
    kp_a: &KeypointSet,
    depth_a: &Tensor,
    pose_b_from_a: &Pose,
    intrinsics: &CameraIntrinsics,
    kp_b: &KeypointSet,
    reproj_tol: f64,
) -> Result<MatchLabels> {
    if depth_a.channels != 1 {
        return Err(Error::ShapeMismatch {
            expected: "single-channel depth map".into(),
            got: format!("{} channels", depth_a.channels),
        });
    }
    if reproj_tol <= 0.0 || !reproj_tol.is_finite() {
        return Err(Error::invalid("reproj_tol must be finite and > 0"));
    }

    // reprojected location of each frame-a keypoint, or None when it leaves
    // the frame; ignored keypoints (no depth) are dropped entirely
    let mut reproj: Vec<(usize, Option<Vector2<f64>>)> = Vec::new();
    for i in 0..kp_a.len() {
        let (u, v) = kp_a.pixel(i);
        let r = v.round() as isize;
        let c = u.round() as isize;
        if r < 0 || c < 0 || r as usize >= depth_a.rows || c as usize >= depth_a.cols {
            continue; // off the depth map: no label
        }
        let d = depth_a.at(r as usize, c as usize, 0) as f64;
        if !d.is_finite() || d <= 0.0 {
            continue; // missing depth: ignored
        }
        let p = intrinsics.unproject(&Vector2::new(u, v), d);
        let q = pose_b_from_a.transform_point(&p);
        match intrinsics.project(&q) {
            Ok(uv) if intrinsics.contains(&uv) => reproj.push((i, Some(uv))),
            _ => reproj.push((i, None)),
        }
    }

    // candidate pairs within tolerance, greedily assigned nearest-first
    let mut candidates: Vec<(f64, usize, usize)> = Vec::new();
    for &(i, ref uv) in &reproj {
        if let Some(uv) = uv {
            for j in 0..kp_b.len() {
                let (bu, bv) = kp_b.pixel(j);
                let dist = ((uv.x - bu).powi(2) + (uv.y - bv).powi(2)).sqrt();
                if dist <= reproj_tol {
                    candidates.push((dist, i, j));
                }
            }
        }
    }
    candidates.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));

    let mut used_a = vec![false; kp_a.len()];
    let mut used_b = vec![false; kp_b.len()];
    let mut matched = Vec::new();
    for (_, i, j) in candidates {
        if !used_a[i] && !used_b[j] {
            used_a[i] = true;
            used_b[j] = true;
            matched.push((i, j));
        }
    }
    matched.sort_unstable();

    let unmatchable_a = reproj
        .iter()
        .filter(|(i, _)| !used_a[*i])
        .map(|(i, _)| *i)
        .collect();
    let unmatchable_b = (0..kp_b.len()).filter(|j| !used_b[*j]).collect();
    Ok(MatchLabels {
        matched,
        unmatchable_a,
        unmatchable_b,
    })
}

/// Mean over layers of the negative log-likelihood of the ground-truth
/// assignment: -[mean log P over matched pairs + half mean log(1 - sigma)
/// over each unmatchable side]. Probabilities are clamped at 1e-12.
pub fn match_loss(per_layer: &[AssignmentMatrix], labels: &MatchLabels) -> Result<f64> {
    if per_layer.is_empty() {
        return Err(Error::invalid("match_loss needs at least one layer"));
    }
    if labels.is_empty() {
        return Err(Error::invalid(
            "match_loss is undefined with no matched pairs and no unmatchable keypoints",
        ));
    }
    let ln = |p: f64| p.max(PROB_CLAMP).ln();
    let mut total = 0.0;
    for layer in per_layer {
        let mut layer_ll = 0.0;
        if !labels.matched.is_empty() {
            let s: f64 = labels
                .matched
                .iter()
                .map(|&(i, j)| ln(layer.p[(i, j)]))
                .sum();
            layer_ll += s / labels.matched.len() as f64;
        }
        if !labels.unmatchable_a.is_empty() {
            let s: f64 = labels
                .unmatchable_a
                .iter()
                .map(|&i| ln(1.0 - layer.sigma_a[i]))
                .sum();
            layer_ll += 0.5 * s / labels.unmatchable_a.len() as f64;
        }
        if !labels.unmatchable_b.is_empty() {
            let s: f64 = labels
                .unmatchable_b
                .iter()
                .map(|&j| ln(1.0 - layer.sigma_b[j]))
                .sum();
            layer_ll += 0.5 * s / labels.unmatchable_b.len() as f64;
        }
        total -= layer_ll;
    }
    Ok(total / per_layer.len() as f64)
}

/// Up-to-scale pose objective: lambda_t * ||t_hat/max(||t_hat||, eps) -
/// t/max(||t||, eps)|| + lambda_r * ||Log(R_hat) - Log(R)||.
pub fn pose_loss(pred: &Pose, gt: &Pose, cfg: &LossConfig) -> f64 {
    let dir = |t: &nalgebra::Vector3<f64>| t / t.norm().max(cfg.epsilon);
    let t_term = (dir(&pred.translation) - dir(&gt.translation)).norm();
    let r_term = if cfg.rotation_geodesic {
        (pred.rotation.inverse() * gt.rotation).angle()
    } else {
        (pred.rotation.log() - gt.rotation.log()).norm()
    };
    cfg.lambda_t * t_term + cfg.lambda_r * r_term
}

/// Same objective for a solver output paired with a ground-truth pose.
pub fn pose_loss_relative(pred: &RelativePose, gt: &Pose, cfg: &LossConfig) -> f64 {
    pose_loss(&pred.to_pose(1.0), gt, cfg)
}

/// Affine blend (1 - lambda_p) * l_match + lambda_p * l_pose.
pub fn total_loss(l_match: f64, l_pose: f64, lambda_p: f64) -> f64 {
    (1.0 - lambda_p) * l_match + lambda_p * l_pose
}
