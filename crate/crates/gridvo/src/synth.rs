//! Synthetic scene and sequence generation: a 3-D point corridor with a
//! forward camera path, rendered either as sparse-texture images (so the
//! real detector fires) or as direct keypoint/descriptor streams that
//! bypass detection.

use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::descriptor::DescriptorSet;
use crate::detector::{Keypoint, KeypointSet};
use crate::error::{Error, Result};
use crate::fmap::Tensor;
use crate::geometry::{CameraIntrinsics, Pose, Rotation};
use crate::image::GrayImage;
use crate::io::{self, FrameEntry, SequenceManifest};
use crate::numeric::randn;
use crate::pipeline::{FrameFeatures, Trajectory, TrajectoryEntry};

#[derive(Debug, Clone, Copy)]
pub struct NoiseModel {
    /// Std of the Gaussian pixel noise on direct-mode keypoints.
    pub pixel_std: f64,
    /// Fraction of direct-mode observations replaced by uniform outliers.
    pub outlier_fraction: f64,
}

impl Default for NoiseModel {
    fn default() -> Self {
        NoiseModel {
            pixel_std: 0.0,
            outlier_fraction: 0.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticScene {
    pub points: Vec<Vector3<f64>>,
    /// Camera-to-world poses.
    pub trajectory: Vec<Pose>,
    pub intrinsics: CameraIntrinsics,
    pub noise: NoiseModel,
}

/// Margin (px) kept between a projection and the image border so rendered
/// blobs stay inside the frame.
const BORDER_MARGIN: f64 = 10.0;
/// Minimum image-space separation enforced between scene points in every
/// frame that sees both, so blobs stay isolated and labels unambiguous.
const MIN_SEPARATION: f64 = 20.0;
const MIN_COVISIBLE: usize = 8;
/// Far cutoff (m); without it every frame sees the whole corridor collapsed
/// around the vanishing point and the separation constraint saturates.
const MAX_DISTANCE: f64 = 10.0;

impl SyntheticScene {
    /// Visible means: in front of the camera (0.8 m <= z <= 8 m) and inside
    /// the frame with a blob-sized margin.
    pub fn visible(&self, pose_abs: &Pose, p: &Vector3<f64>) -> Option<Vector2<f64>> {
        let q = pose_abs.inverse().transform_point(p);
        if q.z < 0.8 || q.z > MAX_DISTANCE {
            return None;
        }
        let uv = self.intrinsics.project(&q).ok()?;
        let (w, h) = (self.intrinsics.width as f64, self.intrinsics.height as f64);
        if uv.x < BORDER_MARGIN
            || uv.y < BORDER_MARGIN
            || uv.x > w - 1.0 - BORDER_MARGIN
            || uv.y > h - 1.0 - BORDER_MARGIN
        {
            return None;
        }
        Some(uv)
    }

    pub fn visible_points(&self, frame: usize) -> Vec<(usize, Vector2<f64>)> {
        self.points
            .iter()
            .enumerate()
            .filter_map(|(id, p)| self.visible(&self.trajectory[frame], p).map(|uv| (id, uv)))
            .collect()
    }

    /// Checks the covisibility invariant: every consecutive frame pair
    /// shares at least 8 points.
    pub fn validate(&self) -> Result<()> {
        if self.trajectory.len() < 2 {
            return Err(Error::invalid("scene needs at least two frames"));
        }
        for f in 0..self.trajectory.len() - 1 {
            let a: std::collections::HashSet<usize> =
                self.visible_points(f).into_iter().map(|(id, _)| id).collect();
            let shared = self
                .visible_points(f + 1)
                .into_iter()
                .filter(|(id, _)| a.contains(id))
                .count();
            if shared < MIN_COVISIBLE {
                return Err(Error::invalid(format!(
                    "frames {f} and {} share only {shared} points",
                    f + 1
                )));
            }
        }
        Ok(())
    }

    /// Point corridor along +z with a forward camera path (slight yaw).
    /// Points are rejection-sampled so that any two points co-visible in a
    /// frame sit at least 20 px apart there.
    pub fn corridor(seed: u64, n_points: usize, n_frames: usize, step_m: f64) -> Result<SyntheticScene> {
        let intrinsics = CameraIntrinsics::new(200.0, 200.0, 160.0, 120.0, 320, 240)?;
        let trajectory: Vec<Pose> = (0..n_frames)
            .map(|i| {
                Pose::se3(
                    Rotation::from_axis_angle(Vector3::new(0.0, 0.002 * i as f64, 0.0)),
                    Vector3::new(0.0, 0.0, step_m * i as f64),
                )
            })
            .collect();
        let depth_span = step_m * n_frames as f64 + 10.0;
        let mut scene = SyntheticScene {
            points: Vec::new(),
            trajectory,
            intrinsics,
            noise: NoiseModel::default(),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5ce4_e001);
        // projections of accepted points, per frame
        let mut proj: Vec<Vec<Vector2<f64>>> = vec![Vec::new(); n_frames];
        let mut attempts = 0usize;
        while scene.points.len() < n_points {
            attempts += 1;
            if attempts > 200 * n_points {
                return Err(Error::invalid(
                    "corridor sampling failed; too many points for the separation constraint",
                ));
            }
            let p = Vector3::new(
                rng.gen::<f64>() * 10.0 - 5.0,
                rng.gen::<f64>() * 7.0 - 3.5,
                rng.gen::<f64>() * depth_span,
            );
            let mut views = Vec::new();
            let mut ok = true;
            for (f, pose) in scene.trajectory.iter().enumerate() {
                if let Some(uv) = scene.visible(pose, &p) {
                    if proj[f]
                        .iter()
                        .any(|q| (q - uv).norm() < MIN_SEPARATION)
                    {
                        ok = false;
                        break;
                    }
                    views.push((f, uv));
                }
            }
            if !ok || views.is_empty() {
                continue;
            }
            for (f, uv) in views {
                proj[f].push(uv);
            }
            scene.points.push(p);
        }
        scene.validate()?;
        Ok(scene)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SynthMode {
    /// Sparse-texture images; the detector runs for real.
    Render,
    /// Keypoints and id-embedding descriptors, no images.
    Direct,
}

#[derive(Debug, Clone)]
pub struct SynthFrame {
    pub id: u64,
    pub timestamp: f64,
    /// Ground-truth camera-to-world pose.
    pub gt_abs: Pose,
    pub image: Option<GrayImage>,
    /// Depth in meters at rendered/observed point pixels, 0 elsewhere.
    pub depth: Tensor,
    /// Direct-mode observations.
    pub features: Option<FrameFeatures>,
    /// Scene point id per direct-mode keypoint.
    pub point_ids: Vec<usize>,
    /// Direct-mode observations replaced by outliers.
    pub outliers: Vec<bool>,
}

#[derive(Debug, Clone)]
pub struct SynthSequence {
    pub frames: Vec<SynthFrame>,
    pub gt: Trajectory,
    pub intrinsics: CameraIntrinsics,
    pub mode: SynthMode,
}

/// Deterministic unit descriptor for a scene point id. Signed basis vectors:
/// exactly orthogonal for ids below 2*DIM, so points that share no scene id
/// can never exceed a mutual-NN similarity threshold and create outliers.
/// Larger scenes may alias descriptors between ids 2*DIM apart.
pub fn id_embedding(id: usize) -> Vec<f64> {
    let dim = crate::matcher::DIM;
    let mut v = vec![0.0; dim];
    v[id % dim] = if (id / dim) % 2 == 0 { 1.0 } else { -1.0 };
    v
}

/// Per-point mini-constellation: a handful of 3-D offset blobs with fixed
/// amplitudes, so each point renders with a distinctive local texture.
fn constellation(id: usize) -> Vec<(Vector3<f64>, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(0xb10b_0000 ^ id as u64);
    (0..4)
        .map(|k| {
            let off = if k == 0 {
                Vector3::zeros()
            } else {
                Vector3::new(
                    (rng.gen::<f64>() - 0.5) * 0.3,
                    (rng.gen::<f64>() - 0.5) * 0.3,
                    0.0,
                )
            };
            let amp = 0.4 + 0.6 * rng.gen::<f64>();
            (off, amp)
        })
        .collect()
}

fn render_frame(scene: &SyntheticScene, frame: usize) -> (GrayImage, Tensor) {
    let k = &scene.intrinsics;
    let (h, w) = (k.height, k.width);
    let mut img = vec![0.0f64; h * w];
    let mut depth = Tensor::zeros(h, w, 1);
    let world_from_cam = &scene.trajectory[frame];
    let cam_from_world = world_from_cam.inverse();
    let sigma = 1.3;
    for (id, _) in scene.visible_points(frame) {
        let p = &scene.points[id];
        let q = cam_from_world.transform_point(p);
        let center = k.project(&q).unwrap();
        // depth patch around the point so labels survive detector offsets
        let (cu, cv) = (center.x.round() as isize, center.y.round() as isize);
        for dr in -4..=4isize {
            for dc in -4..=4isize {
                let (r, c) = (cv + dr, cu + dc);
                if r >= 0 && c >= 0 && (r as usize) < h && (c as usize) < w {
                    *depth.at_mut(r as usize, c as usize, 0) = q.z as f32;
                }
            }
        }
        for (off, amp) in constellation(id) {
            let b = k.project(&(q + off)).unwrap();
            let (bu, bv) = (b.x, b.y);
            let r0 = ((bv - 4.0).floor().max(0.0)) as usize;
            let r1 = ((bv + 4.0).ceil().min((h - 1) as f64)) as usize;
            let c0 = ((bu - 4.0).floor().max(0.0)) as usize;
            let c1 = ((bu + 4.0).ceil().min((w - 1) as f64)) as usize;
            for r in r0..=r1 {
                for c in c0..=c1 {
                    let d2 = (r as f64 - bv).powi(2) + (c as f64 - bu).powi(2);
                    img[r * w + c] += amp * (-d2 / (2.0 * sigma * sigma)).exp();
                }
            }
        }
    }
    for v in img.iter_mut() {
        *v = v.min(1.0);
    }
    (GrayImage::new(h, w, img).unwrap(), depth)
}

fn direct_frame(
    scene: &SyntheticScene,
    frame: usize,
    rng: &mut ChaCha8Rng,
) -> (FrameFeatures, Vec<usize>, Vec<bool>, Tensor) {
    let k = &scene.intrinsics;
    let (h, w) = (k.height, k.width);
    let mut depth = Tensor::zeros(h, w, 1);
    let cam_from_world = scene.trajectory[frame].inverse();
    let mut kps = Vec::new();
    let mut ids = Vec::new();
    let mut outliers = Vec::new();
    for (id, uv) in scene.visible_points(frame) {
        let q = cam_from_world.transform_point(&scene.points[id]);
        let is_outlier = rng.gen::<f64>() < scene.noise.outlier_fraction;
        let (u, v) = if is_outlier {
            (
                rng.gen::<f64>() * (w - 1) as f64,
                rng.gen::<f64>() * (h - 1) as f64,
            )
        } else {
            (
                (uv.x + randn(rng) * scene.noise.pixel_std).clamp(0.0, (w - 1) as f64),
                (uv.y + randn(rng) * scene.noise.pixel_std).clamp(0.0, (h - 1) as f64),
            )
        };
        // depth is recorded at the true projection regardless of noise
        *depth.at_mut(uv.y.round() as usize, uv.x.round() as usize, 0) = q.z as f32;
        kps.push(Keypoint {
            x: v,
            y: u,
            score: 1.0,
        });
        ids.push(id);
        outliers.push(is_outlier);
    }
    let kp = KeypointSet {
        keypoints: kps,
        height: h,
        width: w,
    };
    let mut desc = DMatrix::zeros(kp.len(), crate::matcher::DIM);
    for (row, &id) in ids.iter().enumerate() {
        for (c, v) in id_embedding(id).into_iter().enumerate() {
            desc[(row, c)] = v;
        }
    }
    let positions = (0..kp.len()).map(|i| kp.normalized(i)).collect();
    let features = FrameFeatures {
        keypoints: kp,
        descriptors: DescriptorSet {
            descriptors: desc,
            positions,
        },
    };
    (features, ids, outliers, depth)
}

/// Deterministic given (scene, mode, seed).
pub fn generate_sequence(scene: &SyntheticScene, mode: SynthMode, seed: u64) -> Result<SynthSequence> {
    scene.validate()?;
    let mut frames = Vec::with_capacity(scene.trajectory.len());
    let mut gt = Trajectory::default();
    for (i, pose) in scene.trajectory.iter().enumerate() {
        let timestamp = i as f64 * 0.1;
        let frame = match mode {
            SynthMode::Render => {
                let (image, depth) = render_frame(scene, i);
                SynthFrame {
                    id: i as u64,
                    timestamp,
                    gt_abs: pose.clone(),
                    image: Some(image),
                    depth,
                    features: None,
                    point_ids: Vec::new(),
                    outliers: Vec::new(),
                }
            }
            SynthMode::Direct => {
                let mut rng = ChaCha8Rng::seed_from_u64(
                    seed ^ 0xd12e_c700u64.wrapping_add((i as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15)),
                );
                let (features, point_ids, outliers, depth) = direct_frame(scene, i, &mut rng);
                SynthFrame {
                    id: i as u64,
                    timestamp,
                    gt_abs: pose.clone(),
                    image: None,
                    depth,
                    features: Some(features),
                    point_ids,
                    outliers,
                }
            }
        };
        gt.push(TrajectoryEntry {
            frame_id: i as u64,
            timestamp,
            pose: pose.clone(),
            keyframe: false,
            tracked: true,
        })?;
        frames.push(frame);
    }
    Ok(SynthSequence {
        frames,
        gt,
        intrinsics: scene.intrinsics.clone(),
        mode,
    })
}

/// Writes the sequence as a manifest directory: per-frame files, the
/// ground-truth trajectory (KITTI format), and `sequence.manifest`.
/// Returns the manifest path.
pub fn write_sequence(seq: &SynthSequence, dir: impl AsRef<Path>) -> Result<PathBuf> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    io::save_trajectory_kitti(&seq.gt, dir.join("gt.kitti.txt"))?;
    let mut entries = Vec::new();
    for f in &seq.frames {
        let mut fe = FrameEntry {
            id: f.id,
            timestamp: f.timestamp,
            ..FrameEntry::default()
        };
        let stem = format!("{:06}", f.id);
        let depth_name = format!("{stem}.depth.fmap");
        f.depth.write(dir.join(&depth_name))?;
        fe.depth = Some(PathBuf::from(&depth_name));
        if let Some(img) = &f.image {
            let name = format!("{stem}.pgm");
            img.write_pgm(dir.join(&name))?;
            fe.image = Some(PathBuf::from(name));
        }
        if let Some(feat) = &f.features {
            let kp_name = format!("{stem}.kp.txt");
            let desc_name = format!("{stem}.desc.fmap");
            io::save_keypoints(&feat.keypoints, dir.join(&kp_name))?;
            io::save_descriptors(&feat.descriptors, dir.join(&desc_name))?;
            fe.keypoints = Some(PathBuf::from(kp_name));
            fe.descriptors = Some(PathBuf::from(desc_name));
        }
        entries.push(fe);
    }
    let manifest = SequenceManifest {
        intrinsics: seq.intrinsics.clone(),
        gt_trajectory: Some(PathBuf::from("gt.kitti.txt")),
        frames: entries,
        root: dir.to_path_buf(),
    };
    let path = dir.join("sequence.manifest");
    io::save_manifest(&manifest, &path)?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pose::{estimate_relative_pose, CorrespondenceSet};
    use std::collections::HashMap;

    #[test]
    fn corridor_satisfies_covisibility() {
        let scene = SyntheticScene::corridor(1, 120, 20, 0.4).unwrap();
        scene.validate().unwrap();
        assert_eq!(scene.points.len(), 120);
    }

    #[test]
    fn bad_scene_fails_validation() {
        let intr = CameraIntrinsics::new(200.0, 200.0, 160.0, 120.0, 320, 240).unwrap();
        let scene = SyntheticScene {
            points: vec![Vector3::new(0.0, 0.0, 5.0)],
            trajectory: vec![Pose::identity(), Pose::identity()],
            intrinsics: intr,
            noise: NoiseModel::default(),
        };
        assert!(scene.validate().is_err());
    }

    #[test]
    fn direct_mode_noiseless_recovers_relative_pose() {
        let scene = SyntheticScene::corridor(2, 120, 10, 0.4).unwrap();
        let seq = generate_sequence(&scene, SynthMode::Direct, 7).unwrap();
        for pair in seq.frames.windows(2) {
            let (fa, fb) = (&pair[0], &pair[1]);
            let ka = fa.features.as_ref().unwrap();
            let kb = fb.features.as_ref().unwrap();
            let by_id: HashMap<usize, usize> =
                fb.point_ids.iter().enumerate().map(|(i, &id)| (id, i)).collect();
            let mut a = Vec::new();
            let mut b = Vec::new();
            for (i, id) in fa.point_ids.iter().enumerate() {
                if let Some(&j) = by_id.get(id) {
                    let (ua, va) = ka.keypoints.pixel(i);
                    let (ub, vb) = kb.keypoints.pixel(j);
                    a.push(scene.intrinsics.calibrate(&Vector2::new(ua, va)));
                    b.push(scene.intrinsics.calibrate(&Vector2::new(ub, vb)));
                }
            }
            let n = a.len();
            let c = CorrespondenceSet::new(a, b, vec![1.0; n]).unwrap();
            let rel = estimate_relative_pose(&c).unwrap();
            let gt_rel = fb.gt_abs.inverse().compose(&fa.gt_abs); // frame b <- frame a
            let rot_err = (rel.rotation.inverse() * gt_rel.rotation).angle();
            let dir_gt = gt_rel.translation.normalize();
            let t_err = rel.direction.dot(&dir_gt).clamp(-1.0, 1.0).acos();
            assert!(rot_err < 1e-6, "rot err {rot_err}");
            assert!(t_err < 1e-6, "dir err {t_err}");
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let mut scene = SyntheticScene::corridor(3, 80, 6, 0.4).unwrap();
        scene.noise.pixel_std = 0.5;
        scene.noise.outlier_fraction = 0.1;
        let a = generate_sequence(&scene, SynthMode::Direct, 11).unwrap();
        let b = generate_sequence(&scene, SynthMode::Direct, 11).unwrap();
        for (fa, fb) in a.frames.iter().zip(&b.frames) {
            let ka = fa.features.as_ref().unwrap();
            let kb = fb.features.as_ref().unwrap();
            assert_eq!(ka.keypoints.keypoints, kb.keypoints.keypoints);
            assert_eq!(ka.descriptors.descriptors, kb.descriptors.descriptors);
            assert_eq!(fa.outliers, fb.outliers);
        }
        let r1 = generate_sequence(&scene, SynthMode::Render, 11).unwrap();
        let r2 = generate_sequence(&scene, SynthMode::Render, 11).unwrap();
        for (fa, fb) in r1.frames.iter().zip(&r2.frames) {
            assert_eq!(fa.image.as_ref().unwrap().data(), fb.image.as_ref().unwrap().data());
        }
    }

    #[test]
    fn render_frames_have_texture_and_depth() {
        let scene = SyntheticScene::corridor(4, 100, 5, 0.4).unwrap();
        let seq = generate_sequence(&scene, SynthMode::Render, 0).unwrap();
        for f in &seq.frames {
            let img = f.image.as_ref().unwrap();
            let bright = img.data().iter().filter(|&&v| v > 0.2).count();
            assert!(bright > 50, "frame {} too dark ({bright} bright px)", f.id);
            let depths = f.depth.data.iter().filter(|&&d| d > 0.0).count();
            assert!(depths > 50);
        }
    }

    #[test]
    fn labels_agree_with_id_pairing_on_noiseless_direct() {
        let scene = SyntheticScene::corridor(5, 100, 4, 0.3).unwrap();
        let seq = generate_sequence(&scene, SynthMode::Direct, 0).unwrap();
        let (fa, fb) = (&seq.frames[0], &seq.frames[1]);
        let ka = fa.features.as_ref().unwrap();
        let kb = fb.features.as_ref().unwrap();
        let pose_b_from_a = fb.gt_abs.inverse().compose(&fa.gt_abs);
        let labels = crate::supervision::gt_correspondences(
            &ka.keypoints,
            &fa.depth,
            &pose_b_from_a,
            &scene.intrinsics,
            &kb.keypoints,
            3.0,
        )
        .unwrap();
        let by_id: HashMap<usize, usize> =
            fb.point_ids.iter().enumerate().map(|(i, &id)| (id, i)).collect();
        let mut expected: Vec<(usize, usize)> = fa
            .point_ids
            .iter()
            .enumerate()
            .filter_map(|(i, id)| by_id.get(id).map(|&j| (i, j)))
            .collect();
        expected.sort_unstable();
        assert_eq!(labels.matched, expected);
    }

    #[test]
    fn write_sequence_round_trips_through_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let scene = SyntheticScene::corridor(6, 60, 3, 0.4).unwrap();
        let seq = generate_sequence(&scene, SynthMode::Direct, 1).unwrap();
        let manifest_path = write_sequence(&seq, dir.path()).unwrap();
        let m = io::load_manifest(&manifest_path).unwrap();
        assert_eq!(m.frames.len(), 3);
        let kp = io::load_keypoints(m.resolve(m.frames[0].keypoints.as_ref().unwrap())).unwrap();
        let feat = &seq.frames[0].features.as_ref().unwrap();
        assert_eq!(kp.len(), feat.keypoints.len());
        let desc = io::load_descriptors(
            m.resolve(m.frames[0].descriptors.as_ref().unwrap()),
            &kp,
        )
        .unwrap();
        assert_eq!(desc.len(), feat.descriptors.len());
        let gt = io::load_trajectory_kitti(m.resolve(m.gt_trajectory.as_ref().unwrap())).unwrap();
        assert_eq!(gt.trajectory.len(), 3);
    }
}
