//! Trajectory and matching metrics: ATE after closed-form alignment,
//! KITTI-style segment drift, and matching recall / mean matching accuracy.

use nalgebra::{Matrix3, Vector2, Vector3};

use crate::detector::KeypointSet;
use crate::error::{Error, Result};
use crate::fmap::Tensor;
use crate::geometry::{CameraIntrinsics, Pose, Rotation};
use crate::matcher::MatchSet;
use crate::pipeline::Trajectory;
use crate::supervision::MatchLabels;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AlignmentMode {
    Se3,
    /// Similarity alignment: absorbs the monocular scale.
    Sim3,
}

/// Nearest-timestamp association window, seconds.
const ASSOC_WINDOW: f64 = 0.020;

/// Associates estimate and ground-truth entries: by equal frame id when
/// the id sets overlap, otherwise by nearest timestamp within 20 ms.
pub fn associate(est: &Trajectory, gt: &Trajectory) -> Vec<(usize, usize)> {
    let mut by_id = Vec::new();
    let gt_ids: std::collections::HashMap<u64, usize> = gt
        .entries
        .iter()
        .enumerate()
        .map(|(i, e)| (e.frame_id, i))
        .collect();
    for (i, e) in est.entries.iter().enumerate() {
        if let Some(&j) = gt_ids.get(&e.frame_id) {
            by_id.push((i, j));
        }
    }
    if !by_id.is_empty() {
        return by_id;
    }
    // timestamp fallback; gt assumed time-sorted
    let mut out = Vec::new();
    for (i, e) in est.entries.iter().enumerate() {
        let j = gt
            .entries
            .iter()
            .enumerate()
            .min_by(|(_, a), (_, b)| {
                (a.timestamp - e.timestamp)
                    .abs()
                    .total_cmp(&(b.timestamp - e.timestamp).abs())
            })
            .map(|(j, _)| j);
        if let Some(j) = j {
            if (gt.entries[j].timestamp - e.timestamp).abs() <= ASSOC_WINDOW {
                out.push((i, j));
            }
        }
    }
    out
}

/// Closed-form least-squares similarity (or rigid) alignment of point set
/// `x` onto `y`: minimizes sum ||s R x_i + t - y_i||^2.
pub fn umeyama(x: &[Vector3<f64>], y: &[Vector3<f64>], mode: AlignmentMode) -> Result<(f64, Rotation, Vector3<f64>)> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::invalid("alignment needs >= 2 paired points"));
    }
    let n = x.len() as f64;
    let cx = x.iter().sum::<Vector3<f64>>() / n;
    let cy = y.iter().sum::<Vector3<f64>>() / n;
    let mut cov = Matrix3::zeros();
    let mut var_x = 0.0;
    for (a, b) in x.iter().zip(y) {
        let dx = a - cx;
        let dy = b - cy;
        cov += dy * dx.transpose();
        var_x += dx.norm_squared();
    }
    cov /= n;
    var_x /= n;
    let svd = cov.svd(true, true);
    let u = svd.u.ok_or_else(|| Error::degenerate("alignment svd failed"))?;
    let vt = svd.v_t.ok_or_else(|| Error::degenerate("alignment svd failed"))?;
    let mut s_fix = Matrix3::identity();
    if (u * vt).determinant() < 0.0 {
        s_fix[(2, 2)] = -1.0;
    }
    let r = Rotation::from_matrix_reorthonormalized(u * s_fix * vt)?;
    let scale = match mode {
        AlignmentMode::Se3 => 1.0,
        AlignmentMode::Sim3 => {
            if var_x <= 1e-30 {
                return Err(Error::degenerate("zero-variance point set"));
            }
            (svd.singular_values[0] * s_fix[(0, 0)]
                + svd.singular_values[1] * s_fix[(1, 1)]
                + svd.singular_values[2] * s_fix[(2, 2)])
                / var_x
        }
    };
    let t = cy - scale * r.rotate(&cx);
    Ok((scale, r, t))
}

/// RMSE of translation residuals after alignment.
pub fn ate(est: &Trajectory, gt: &Trajectory, mode: AlignmentMode) -> Result<f64> {
    let pairs = associate(est, gt);
    if pairs.len() < 2 {
        return Err(Error::invalid(format!(
            "need >= 2 associated poses, got {}",
            pairs.len()
        )));
    }
    let x: Vec<Vector3<f64>> = pairs
        .iter()
        .map(|&(i, _)| est.entries[i].pose.translation)
        .collect();
    let y: Vec<Vector3<f64>> = pairs
        .iter()
        .map(|&(_, j)| gt.entries[j].pose.translation)
        .collect();
    let (s, r, t) = umeyama(&x, &y, mode)?;
    let ss: f64 = x
        .iter()
        .zip(&y)
        .map(|(a, b)| (s * r.rotate(a) + t - b).norm_squared())
        .sum();
    Ok((ss / x.len() as f64).sqrt())
}

pub const DRIFT_LENGTHS: [f64; 8] = [100.0, 200.0, 300.0, 400.0, 500.0, 600.0, 700.0, 800.0];
const DRIFT_STEP: usize = 10;

#[derive(Debug, Clone)]
pub struct DriftReport {
    /// Translational drift, percent.
    pub t_rel: f64,
    /// Rotational drift, degrees per 100 m.
    pub r_rel: f64,
    /// (length, mean t_rel, mean r_rel) where segments of that length exist.
    pub per_length: Vec<(f64, Option<(f64, f64)>)>,
    pub segments: usize,
}

impl DriftReport {
    /// True when the trajectory was too short for any 100 m segment.
    pub fn is_empty(&self) -> bool {
        self.segments == 0
    }
}

fn path_distances(gt: &Trajectory) -> Vec<f64> {
    let mut dist = Vec::with_capacity(gt.len());
    let mut acc = 0.0;
    for (i, e) in gt.entries.iter().enumerate() {
        if i > 0 {
            acc += (e.pose.translation - gt.entries[i - 1].pose.translation).norm();
        }
        dist.push(acc);
    }
    dist
}

/// KITTI devkit drift: for each start frame (every 10th) and each segment
/// length in 100..800 m along the ground-truth path, the relative-pose
/// error between the estimated and ground-truth segment, normalized by the
/// nominal length.
pub fn kitti_drift(est: &Trajectory, gt: &Trajectory) -> Result<DriftReport> {
    let pairs = associate(est, gt);
    if pairs.len() < 2 {
        return Err(Error::invalid("need >= 2 associated poses"));
    }
    let est_poses: Vec<&Pose> = pairs.iter().map(|&(i, _)| &est.entries[i].pose).collect();
    let gt_sub = Trajectory {
        entries: pairs.iter().map(|&(_, j)| gt.entries[j].clone()).collect(),
    };
    let dist = path_distances(&gt_sub);
    let n = gt_sub.len();
    let mut per_length: Vec<(f64, Vec<(f64, f64)>)> =
        DRIFT_LENGTHS.iter().map(|&l| (l, Vec::new())).collect();
    let mut segments = 0;
    for first in (0..n).step_by(DRIFT_STEP) {
        for (len, errs) in per_length.iter_mut() {
            // first frame whose path distance exceeds the segment length
            let last = match (first + 1..n).find(|&j| dist[j] > dist[first] + *len) {
                Some(j) => j,
                None => continue,
            };
            let gt_delta = gt_sub.entries[first]
                .pose
                .inverse()
                .compose(&gt_sub.entries[last].pose);
            let est_delta = est_poses[first].inverse().compose(est_poses[last]);
            let err = est_delta.inverse().compose(&gt_delta);
            let t_err = err.translation.norm() / *len * 100.0; // percent
            let r_err = err.rotation.angle().to_degrees() / *len * 100.0; // deg / 100 m
            errs.push((t_err, r_err));
            segments += 1;
        }
    }
    let mut all_t = 0.0;
    let mut all_r = 0.0;
    let mut breakdown = Vec::new();
    for (len, errs) in &per_length {
        if errs.is_empty() {
            breakdown.push((*len, None));
        } else {
            let t = errs.iter().map(|e| e.0).sum::<f64>() / errs.len() as f64;
            let r = errs.iter().map(|e| e.1).sum::<f64>() / errs.len() as f64;
            all_t += errs.iter().map(|e| e.0).sum::<f64>();
            all_r += errs.iter().map(|e| e.1).sum::<f64>();
            breakdown.push((*len, Some((t, r))));
        }
    }
    let (t_rel, r_rel) = if segments > 0 {
        (all_t / segments as f64, all_r / segments as f64)
    } else {
        (0.0, 0.0)
    };
    Ok(DriftReport {
        t_rel,
        r_rel,
        per_length: breakdown,
        segments,
    })
}

pub const MMA_THRESHOLDS: [f64; 4] = [1.0, 3.0, 5.0, 10.0];

#[derive(Debug, Clone)]
pub struct MatchingReport {
    /// correct@5px / ground-truth matchable count.
    pub recall_5: f64,
    /// (threshold px, correct fraction) at 1/3/5/10 px.
    pub mma: Vec<(f64, f64)>,
    pub predicted: usize,
    /// Predictions whose first keypoint had no depth; counted as incorrect.
    pub unverifiable: usize,
    /// Set when there were no predictions (MMA reported as 0).
    pub empty_prediction: bool,
}

/// Scores predicted matches against reprojection geometry: a match is
/// correct at threshold tau when the depth-unprojected, pose-transformed,
/// reprojected first keypoint lands within tau px of the second keypoint.
pub fn matching_metrics(
    pred: &MatchSet,
    kp_a: &KeypointSet,
    kp_b: &KeypointSet,
    labels: &MatchLabels,
    depth_a: &Tensor,
    pose_b_from_a: &Pose,
    intrinsics: &CameraIntrinsics,
) -> Result<MatchingReport> {
    if depth_a.channels != 1 {
        return Err(Error::ShapeMismatch {
            expected: "single-channel depth map".into(),
            got: format!("{} channels", depth_a.channels),
        });
    }
    if pred.is_empty() {
        return Ok(MatchingReport {
            recall_5: 0.0,
            mma: MMA_THRESHOLDS.iter().map(|&t| (t, 0.0)).collect(),
            predicted: 0,
            unverifiable: 0,
            empty_prediction: true,
        });
    }
    let mut errors = Vec::with_capacity(pred.len());
    let mut unverifiable = 0;
    for m in &pred.pairs {
        let (u, v) = kp_a.pixel(m.a);
        let (r, c) = (v.round() as isize, u.round() as isize);
        if r < 0 || c < 0 || r as usize >= depth_a.rows || c as usize >= depth_a.cols {
            unverifiable += 1;
            continue;
        }
        let d = depth_a.at(r as usize, c as usize, 0) as f64;
        if !d.is_finite() || d <= 0.0 {
            unverifiable += 1;
            continue;
        }
        let p = intrinsics.unproject(&Vector2::new(u, v), d);
        let q = pose_b_from_a.transform_point(&p);
        match intrinsics.project(&q) {
            Ok(uv) => {
                let (bu, bv) = kp_b.pixel(m.b);
                errors.push(((uv.x - bu).powi(2) + (uv.y - bv).powi(2)).sqrt());
            }
            Err(_) => errors.push(f64::INFINITY),
        }
    }
    let predicted = pred.len();
    let correct_at = |tau: f64| errors.iter().filter(|&&e| e <= tau).count();
    let mma = MMA_THRESHOLDS
        .iter()
        .map(|&tau| (tau, correct_at(tau) as f64 / predicted as f64))
        .collect();
    let recall_5 = if labels.matched.is_empty() {
        0.0
    } else {
        correct_at(5.0) as f64 / labels.matched.len() as f64
    };
    Ok(MatchingReport {
        recall_5,
        mma,
        predicted,
        unverifiable,
        empty_prediction: false,
    })
}

// ---------------------------------------------------------------------------
// report emission

/// Rows of (metric, sequence, value), emitted as CSV or an aligned table.
#[derive(Debug, Clone, Default)]
pub struct MetricReport {
    pub rows: Vec<(String, String, f64)>,
}

impl MetricReport {
    pub fn push(&mut self, metric: impl Into<String>, sequence: impl Into<String>, value: f64) {
        self.rows.push((metric.into(), sequence.into(), value));
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("metric,sequence,value\n");
        for (m, s, v) in &self.rows {
            out.push_str(&format!("{m},{s},{v}\n"));
        }
        out
    }

    pub fn to_table(&self) -> String {
        let w_m = self.rows.iter().map(|r| r.0.len()).max().unwrap_or(6).max(6);
        let w_s = self.rows.iter().map(|r| r.1.len()).max().unwrap_or(8).max(8);
        let mut out = format!("{:<w_m$}  {:<w_s$}  value\n", "metric", "sequence");
        for (m, s, v) in &self.rows {
            out.push_str(&format!("{m:<w_m$}  {s:<w_s$}  {v:.6}\n"));
        }
        out
    }
}
