//! Sequence and trajectory IO: KITTI / TUM trajectory text formats, the
//! sequence manifest, flat key=value pipeline configs, and keypoint /
//! descriptor files.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, Matrix3, Quaternion, UnitQuaternion, Vector3};

use crate::descriptor::DescriptorSet;
use crate::detector::{Keypoint, KeypointSet};
use crate::error::{Error, Result};
use crate::fmap::Tensor;
use crate::geometry::{CameraIntrinsics, Pose, Rotation};
use crate::pipeline::{Backend, PipelineConfig, Provider, ScaleSource, Trajectory, TrajectoryEntry};

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.display().to_string(),
        line,
        msg: msg.into(),
    }
}

fn parse_f64(path: &Path, line: usize, tok: &str) -> Result<f64> {
    let v: f64 = tok
        .parse()
        .map_err(|_| parse_err(path, line, format!("bad number '{tok}'")))?;
    if !v.is_finite() {
        return Err(parse_err(path, line, format!("non-finite value '{tok}'")));
    }
    Ok(v)
}

// ---------------------------------------------------------------------------
// trajectory formats

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrajectoryFormat {
    Kitti,
    Tum,
}

impl TrajectoryFormat {
    /// Picks the format from the file name: `.tum.txt` means TUM, anything
    /// else (including `.kitti.txt`) means KITTI.
    pub fn from_path(path: impl AsRef<Path>) -> TrajectoryFormat {
        let name = path.as_ref().file_name().and_then(|s| s.to_str()).unwrap_or("");
        if name.ends_with(".tum.txt") {
            TrajectoryFormat::Tum
        } else {
            TrajectoryFormat::Kitti
        }
    }
}

/// A loaded trajectory plus the number of rotations that needed
/// re-orthonormalization (orthogonality drift above 1e-6).
#[derive(Debug, Clone)]
pub struct TrajectoryLoad {
    pub trajectory: Trajectory,
    pub reorthonormalized: usize,
}

fn entry(frame_id: u64, timestamp: f64, pose: Pose) -> TrajectoryEntry {
    TrajectoryEntry {
        frame_id,
        timestamp,
        pose,
        keyframe: false,
        tracked: true,
    }
}

/// KITTI odometry convention: one line per pose, 12 space-separated reals,
/// the row-major upper 3x4 of the camera-to-world matrix [R|t].
pub fn load_trajectory_kitti(path: impl AsRef<Path>) -> Result<TrajectoryLoad> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;
    let mut trajectory = Trajectory::default();
    let mut reorthonormalized = 0;
    let mut id = 0u64;
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.len() != 12 {
            return Err(parse_err(path, lineno + 1, format!("expected 12 fields, got {}", toks.len())));
        }
        let mut v = [0.0f64; 12];
        for (i, t) in toks.iter().enumerate() {
            v[i] = parse_f64(path, lineno + 1, t)?;
        }
        let m = Matrix3::new(v[0], v[1], v[2], v[4], v[5], v[6], v[8], v[9], v[10]);
        let drift = (m.transpose() * m - Matrix3::identity()).norm();
        if drift > 1e-6 {
            reorthonormalized += 1;
        }
        let rotation = Rotation::from_matrix_reorthonormalized(m)
            .map_err(|e| parse_err(path, lineno + 1, e.to_string()))?;
        let t = Vector3::new(v[3], v[7], v[11]);
        trajectory.push(entry(id, id as f64, Pose::se3(rotation, t)))?;
        id += 1;
    }
    Ok(TrajectoryLoad {
        trajectory,
        reorthonormalized,
    })
}

pub fn save_trajectory_kitti(traj: &Trajectory, path: impl AsRef<Path>) -> Result<()> {
    let mut out = String::new();
    for e in &traj.entries {
        if (e.pose.scale - 1.0).abs() > 1e-12 {
            return Err(Error::invalid("trajectory files store rigid poses only"));
        }
        let r = e.pose.rotation.matrix();
        let t = &e.pose.translation;
        let row = [
            r[(0, 0)], r[(0, 1)], r[(0, 2)], t.x,
            r[(1, 0)], r[(1, 1)], r[(1, 2)], t.y,
            r[(2, 0)], r[(2, 1)], r[(2, 2)], t.z,
        ];
        let line: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
        writeln!(out, "{}", line.join(" ")).unwrap();
    }
    fs::write(path, out)?;
    Ok(())
}

/// TUM convention: "timestamp tx ty tz qx qy qz qw" per line; the
/// quaternion must be unit within 1e-6.
pub fn load_trajectory_tum(path: impl AsRef<Path>) -> Result<TrajectoryLoad> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;
    let mut trajectory = Trajectory::default();
    let mut id = 0u64;
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.len() != 8 {
            return Err(parse_err(path, lineno + 1, format!("expected 8 fields, got {}", toks.len())));
        }
        let mut v = [0.0f64; 8];
        for (i, t) in toks.iter().enumerate() {
            v[i] = parse_f64(path, lineno + 1, t)?;
        }
        let q = Quaternion::new(v[7], v[4], v[5], v[6]); // w, x, y, z
        if (q.norm() - 1.0).abs() > 1e-6 {
            return Err(parse_err(path, lineno + 1, format!("quaternion norm {} is not 1", q.norm())));
        }
        let uq = UnitQuaternion::from_quaternion(q);
        let rotation = Rotation::from_matrix_reorthonormalized(*uq.to_rotation_matrix().matrix())
            .map_err(|e| parse_err(path, lineno + 1, e.to_string()))?;
        let t = Vector3::new(v[1], v[2], v[3]);
        trajectory.push(entry(id, v[0], Pose::se3(rotation, t)))?;
        id += 1;
    }
    Ok(TrajectoryLoad {
        trajectory,
        reorthonormalized: 0,
    })
}

pub fn save_trajectory_tum(traj: &Trajectory, path: impl AsRef<Path>) -> Result<()> {
    let mut out = String::new();
    for e in &traj.entries {
        if (e.pose.scale - 1.0).abs() > 1e-12 {
            return Err(Error::invalid("trajectory files store rigid poses only"));
        }
        let rot = nalgebra::Rotation3::from_matrix_unchecked(*e.pose.rotation.matrix());
        let mut q = UnitQuaternion::from_rotation_matrix(&rot);
        if q.w < 0.0 {
            q = UnitQuaternion::new_unchecked(-q.into_inner());
        }
        let t = &e.pose.translation;
        writeln!(
            out,
            "{} {} {} {} {} {} {} {}",
            e.timestamp, t.x, t.y, t.z, q.i, q.j, q.k, q.w
        )
        .unwrap();
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn load_trajectory(path: impl AsRef<Path>, format: TrajectoryFormat) -> Result<TrajectoryLoad> {
    match format {
        TrajectoryFormat::Kitti => load_trajectory_kitti(path),
        TrajectoryFormat::Tum => load_trajectory_tum(path),
    }
}

pub fn save_trajectory(traj: &Trajectory, path: impl AsRef<Path>, format: TrajectoryFormat) -> Result<()> {
    match format {
        TrajectoryFormat::Kitti => save_trajectory_kitti(traj, path),
        TrajectoryFormat::Tum => save_trajectory_tum(traj, path),
    }
}

// ---------------------------------------------------------------------------
// sequence manifest

/// Optional per-frame artifact paths, all relative to the manifest directory.
#[derive(Debug, Clone, Default)]
pub struct FrameEntry {
    pub id: u64,
    pub timestamp: f64,
    pub image: Option<PathBuf>,
    pub depth: Option<PathBuf>,
    pub coarse: Option<PathBuf>,
    pub fine: Option<PathBuf>,
    pub keypoints: Option<PathBuf>,
    pub descriptors: Option<PathBuf>,
}

#[derive(Debug, Clone)]
pub struct SequenceManifest {
    pub intrinsics: CameraIntrinsics,
    pub gt_trajectory: Option<PathBuf>,
    pub frames: Vec<FrameEntry>,
    /// Directory the manifest was loaded from; all paths resolve against it.
    pub root: PathBuf,
}

impl SequenceManifest {
    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.root.join(p)
        }
    }
}

/// Text manifest with three sections:
///
/// ```text
/// [intrinsics]
/// fx = 200.0
/// ...
/// [sequence]
/// gt = gt.kitti.txt
/// [frames]
/// 0 0.0 image=frames/000000.pgm depth=depth/000000.fmap
/// ```
pub fn load_manifest(path: impl AsRef<Path>) -> Result<SequenceManifest> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;
    let root = path.parent().unwrap_or(Path::new(".")).to_path_buf();

    #[derive(PartialEq)]
    enum Section {
        None,
        Intrinsics,
        Sequence,
        Frames,
    }
    let mut section = Section::None;
    let mut intr: std::collections::HashMap<String, f64> = std::collections::HashMap::new();
    let mut gt_trajectory = None;
    let mut frames: Vec<FrameEntry> = Vec::new();

    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        match line {
            "[intrinsics]" => {
                section = Section::Intrinsics;
                continue;
            }
            "[sequence]" => {
                section = Section::Sequence;
                continue;
            }
            "[frames]" => {
                section = Section::Frames;
                continue;
            }
            _ => {}
        }
        match section {
            Section::None => return Err(parse_err(path, lineno + 1, "content before any section header")),
            Section::Intrinsics => {
                let (k, v) = split_kv(line).ok_or_else(|| parse_err(path, lineno + 1, "expected key = value"))?;
                intr.insert(k.to_string(), parse_f64(path, lineno + 1, v)?);
            }
            Section::Sequence => {
                let (k, v) = split_kv(line).ok_or_else(|| parse_err(path, lineno + 1, "expected key = value"))?;
                match k {
                    "gt" => gt_trajectory = Some(PathBuf::from(v)),
                    other => return Err(parse_err(path, lineno + 1, format!("unknown sequence key '{other}'"))),
                }
            }
            Section::Frames => {
                let mut toks = line.split_whitespace();
                let id: u64 = toks
                    .next()
                    .and_then(|t| t.parse().ok())
                    .ok_or_else(|| parse_err(path, lineno + 1, "bad frame id"))?;
                let ts = parse_f64(
                    path,
                    lineno + 1,
                    toks.next().ok_or_else(|| parse_err(path, lineno + 1, "missing timestamp"))?,
                )?;
                let mut fe = FrameEntry {
                    id,
                    timestamp: ts,
                    ..FrameEntry::default()
                };
                for tok in toks {
                    let (k, v) = tok
                        .split_once('=')
                        .ok_or_else(|| parse_err(path, lineno + 1, format!("expected key=path, got '{tok}'")))?;
                    let p = Some(PathBuf::from(v));
                    match k {
                        "image" => fe.image = p,
                        "depth" => fe.depth = p,
                        "coarse" => fe.coarse = p,
                        "fine" => fe.fine = p,
                        "keypoints" => fe.keypoints = p,
                        "descriptors" => fe.descriptors = p,
                        other => return Err(parse_err(path, lineno + 1, format!("unknown frame key '{other}'"))),
                    }
                }
                if let Some(prev) = frames.last() {
                    if fe.id <= prev.id {
                        return Err(parse_err(path, lineno + 1, "frame ids must be strictly increasing"));
                    }
                    if fe.timestamp < prev.timestamp {
                        return Err(parse_err(path, lineno + 1, "timestamps must be nondecreasing"));
                    }
                }
                frames.push(fe);
            }
        }
    }

    let get = |k: &str| -> Result<f64> {
        intr.get(k)
            .copied()
            .ok_or_else(|| Error::Format(format!("manifest missing intrinsics key '{k}'")))
    };
    let intrinsics = CameraIntrinsics::new(
        get("fx")?,
        get("fy")?,
        get("cx")?,
        get("cy")?,
        get("width")? as usize,
        get("height")? as usize,
    )?;
    Ok(SequenceManifest {
        intrinsics,
        gt_trajectory,
        frames,
        root,
    })
}

pub fn save_manifest(m: &SequenceManifest, path: impl AsRef<Path>) -> Result<()> {
    let mut out = String::new();
    let k = &m.intrinsics;
    writeln!(out, "[intrinsics]").unwrap();
    writeln!(out, "fx = {}", k.fx).unwrap();
    writeln!(out, "fy = {}", k.fy).unwrap();
    writeln!(out, "cx = {}", k.cx).unwrap();
    writeln!(out, "cy = {}", k.cy).unwrap();
    writeln!(out, "width = {}", k.width).unwrap();
    writeln!(out, "height = {}", k.height).unwrap();
    writeln!(out, "[sequence]").unwrap();
    if let Some(gt) = &m.gt_trajectory {
        writeln!(out, "gt = {}", gt.display()).unwrap();
    }
    writeln!(out, "[frames]").unwrap();
    for f in &m.frames {
        write!(out, "{} {}", f.id, f.timestamp).unwrap();
        for (key, p) in [
            ("image", &f.image),
            ("depth", &f.depth),
            ("coarse", &f.coarse),
            ("fine", &f.fine),
            ("keypoints", &f.keypoints),
            ("descriptors", &f.descriptors),
        ] {
            if let Some(p) = p {
                write!(out, " {key}={}", p.display()).unwrap();
            }
        }
        writeln!(out).unwrap();
    }
    fs::write(path, out)?;
    Ok(())
}

fn split_kv(line: &str) -> Option<(&str, &str)> {
    let (k, v) = line.split_once('=')?;
    Some((k.trim(), v.trim()))
}

// ---------------------------------------------------------------------------
// pipeline config file

/// Flat `key = value` config; unknown keys are rejected. Keys:
/// keyframe_threshold, stride, match_threshold, min_matches,
/// ransac_iterations, ransac_threshold_px, provider
/// (classical|precomputed), backend (mutual-nn|attention), scale_source
/// (ground-truth|unit), detector.{kernel_size,sigma,patch,nms_radius,
/// threshold,top_k}.
pub fn load_pipeline_config(path: impl AsRef<Path>, intrinsics: CameraIntrinsics) -> Result<PipelineConfig> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;
    let mut cfg = PipelineConfig::new(intrinsics);
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = split_kv(line).ok_or_else(|| parse_err(path, lineno + 1, "expected key = value"))?;
        apply_config_key(&mut cfg, k, v)
            .map_err(|e| parse_err(path, lineno + 1, e.to_string()))?;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Applies a single config assignment; also backs CLI `--set key=value`
/// overrides, which win over file values.
pub fn apply_config_key(cfg: &mut PipelineConfig, key: &str, value: &str) -> Result<()> {
    let bad = |what: &str| Error::invalid(format!("bad value '{value}' for {what}"));
    match key {
        "keyframe_threshold" => cfg.keyframe_threshold = value.parse().map_err(|_| bad(key))?,
        "stride" => cfg.stride = value.parse().map_err(|_| bad(key))?,
        "match_threshold" => cfg.match_threshold = value.parse().map_err(|_| bad(key))?,
        "min_matches" => cfg.min_matches = value.parse().map_err(|_| bad(key))?,
        "ransac_iterations" => cfg.ransac_iterations = value.parse().map_err(|_| bad(key))?,
        "ransac_threshold_px" => cfg.ransac_threshold_px = value.parse().map_err(|_| bad(key))?,
        "provider" => {
            cfg.provider = match value {
                "classical" => Provider::Classical,
                "precomputed" => Provider::Precomputed,
                _ => return Err(bad(key)),
            }
        }
        "backend" => {
            cfg.backend = match value {
                "mutual-nn" => Backend::MutualNn,
                "attention" => Backend::Attention,
                _ => return Err(bad(key)),
            }
        }
        "scale_source" => {
            cfg.scale_source = match value {
                "ground-truth" => ScaleSource::GroundTruth,
                "unit" => ScaleSource::Unit,
                _ => return Err(bad(key)),
            }
        }
        "detector.kernel_size" => cfg.detector.kernel_size = value.parse().map_err(|_| bad(key))?,
        "detector.sigma" => cfg.detector.sigma = value.parse().map_err(|_| bad(key))?,
        "detector.patch" => cfg.detector.patch = value.parse().map_err(|_| bad(key))?,
        "detector.nms_radius" => cfg.detector.nms_radius = value.parse().map_err(|_| bad(key))?,
        "detector.threshold" => cfg.detector.threshold = value.parse().map_err(|_| bad(key))?,
        "detector.top_k" => cfg.detector.top_k = value.parse().map_err(|_| bad(key))?,
        other => return Err(Error::invalid(format!("unknown config key '{other}'"))),
    }
    Ok(())
}

pub fn save_pipeline_config(cfg: &PipelineConfig, path: impl AsRef<Path>) -> Result<()> {
    let provider = match cfg.provider {
        Provider::Classical => "classical",
        Provider::Precomputed => "precomputed",
    };
    let backend = match cfg.backend {
        Backend::MutualNn => "mutual-nn",
        Backend::Attention => "attention",
    };
    let scale = match cfg.scale_source {
        ScaleSource::GroundTruth => "ground-truth",
        ScaleSource::Unit => "unit",
    };
    let d = &cfg.detector;
    let out = format!(
        "keyframe_threshold = {}\nstride = {}\nmatch_threshold = {}\nmin_matches = {}\n\
         ransac_iterations = {}\nransac_threshold_px = {}\n\
         provider = {}\nbackend = {}\nscale_source = {}\n\
         detector.kernel_size = {}\ndetector.sigma = {}\ndetector.patch = {}\n\
         detector.nms_radius = {}\ndetector.threshold = {}\ndetector.top_k = {}\n",
        cfg.keyframe_threshold,
        cfg.stride,
        cfg.match_threshold,
        cfg.min_matches,
        cfg.ransac_iterations,
        cfg.ransac_threshold_px,
        provider,
        backend,
        scale,
        d.kernel_size,
        d.sigma,
        d.patch,
        d.nms_radius,
        d.threshold,
        d.top_k,
    );
    fs::write(path, out)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// keypoints and descriptors

/// Keypoint text: header "rows cols", then one "x y score" line per point.
pub fn save_keypoints(kp: &KeypointSet, path: impl AsRef<Path>) -> Result<()> {
    let mut out = String::new();
    writeln!(out, "{} {}", kp.height, kp.width).unwrap();
    for k in &kp.keypoints {
        writeln!(out, "{} {} {}", k.x, k.y, k.score).unwrap();
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn load_keypoints(path: impl AsRef<Path>) -> Result<KeypointSet> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines().enumerate();
    let (lineno, header) = lines
        .next()
        .ok_or_else(|| parse_err(path, 1, "empty keypoint file"))?;
    let toks: Vec<&str> = header.split_whitespace().collect();
    if toks.len() != 2 {
        return Err(parse_err(path, lineno + 1, "expected 'rows cols' header"));
    }
    let height: usize = toks[0].parse().map_err(|_| parse_err(path, 1, "bad rows"))?;
    let width: usize = toks[1].parse().map_err(|_| parse_err(path, 1, "bad cols"))?;
    let mut keypoints = Vec::new();
    for (lineno, line) in lines {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.len() != 3 {
            return Err(parse_err(path, lineno + 1, "expected 'x y score'"));
        }
        keypoints.push(Keypoint {
            x: parse_f64(path, lineno + 1, toks[0])?,
            y: parse_f64(path, lineno + 1, toks[1])?,
            score: parse_f64(path, lineno + 1, toks[2])?,
        });
    }
    Ok(KeypointSet {
        keypoints,
        height,
        width,
    })
}

/// Descriptors ride in an FMAP tensor of shape K x 1 x dim; positions come
/// from the keypoint set.
pub fn save_descriptors(desc: &DescriptorSet, path: impl AsRef<Path>) -> Result<()> {
    let k = desc.len();
    let dim = desc.dim();
    let mut data = Vec::with_capacity(k * dim);
    for i in 0..k {
        for j in 0..dim {
            data.push(desc.descriptors[(i, j)] as f32);
        }
    }
    Tensor::new(k, 1, dim, data)?.write(path)
}

pub fn load_descriptors(path: impl AsRef<Path>, kp: &KeypointSet) -> Result<DescriptorSet> {
    let t = Tensor::read(path)?;
    if t.cols != 1 || t.rows != kp.len() {
        return Err(Error::ShapeMismatch {
            expected: format!("{} x 1 x dim descriptor tensor", kp.len()),
            got: format!("{} x {} x {}", t.rows, t.cols, t.channels),
        });
    }
    let descriptors = DMatrix::from_fn(t.rows, t.channels, |i, j| t.at(i, 0, j) as f64);
    let positions = (0..kp.len()).map(|i| kp.normalized(i)).collect();
    Ok(DescriptorSet {
        descriptors,
        positions,
    })
}
