//! Command-line frontend: detection, description, matching, odometry,
//! evaluation, and synthetic sequence generation.

use std::path::PathBuf;
use std::sync::Arc;

use clap::{Parser, Subcommand, ValueEnum};
use nalgebra::Vector2;

use gridvo::descriptor::{self, DenseFeatureMap, FusionWeights, Stride};
use gridvo::detector::{self, DetectorConfig};
use gridvo::error::{Error, Result};
use gridvo::eval::{self, AlignmentMode, MetricReport};
use gridvo::fmap::Tensor;
use gridvo::geometry::Pose;
use gridvo::image;
use gridvo::io::{self, FrameEntry, SequenceManifest, TrajectoryFormat};
use gridvo::matcher::{self, MatchSet, MatcherWeights};
use gridvo::pipeline::{Backend, FrameFeatures, PipelineConfig, ScaleSource, VoEngine};
use gridvo::pose::{estimate_relative_pose, CorrespondenceSet};
use gridvo::supervision;
use gridvo::synth::{self, SynthMode, SyntheticScene};

#[derive(Parser)]
#[command(name = "gridvo", version, about = "Sparse-feature visual odometry toolkit")]
struct Cli {
    /// Seed for all randomized weights and generators.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Worker threads for frame prefetching (1 = fully sequential).
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Kitti,
    Tum,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Se3,
    Sim3,
}

#[derive(Clone, Copy, ValueEnum)]
enum SynthModeArg {
    Render,
    Direct,
}

#[derive(Subcommand)]
enum Command {
    /// Detect grid-aligned salient keypoints in a PGM/PPM image.
    Detect {
        #[arg(long)]
        image: PathBuf,
        /// Output keypoint text file.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 5)]
        kernel_size: usize,
        #[arg(long, default_value_t = 2.0)]
        sigma: f64,
        /// Grid cell size in pixels.
        #[arg(long, default_value_t = 14)]
        patch: usize,
        /// Chebyshev non-maximum-suppression radius in pixels.
        #[arg(long, default_value_t = 8)]
        nms_radius: usize,
        /// Minimum keypoint score.
        #[arg(long, default_value_t = 0.01)]
        threshold: f64,
        /// Maximum keypoints kept.
        #[arg(long, default_value_t = 512)]
        top_k: usize,
    },
    /// Compute fused descriptors for detected keypoints.
    Describe {
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        keypoints: PathBuf,
        /// Output descriptor FMAP file.
        #[arg(long)]
        out: PathBuf,
        /// Fusion weight FMAP file (seeded random when omitted).
        #[arg(long)]
        fusion_weights: Option<PathBuf>,
    },
    /// Match two frames of a sequence and estimate their relative pose.
    Match {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        frame_a: u64,
        #[arg(long)]
        frame_b: u64,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Matcher weight manifest (seeded random when omitted).
        #[arg(long)]
        matcher_weights: Option<PathBuf>,
        #[arg(long)]
        fusion_weights: Option<PathBuf>,
        /// Optional output file for the match list.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Config overrides, key=value (win over file values).
        #[arg(long = "set")]
        set: Vec<String>,
    },
    /// Run visual odometry over a sequence manifest.
    Odometry {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output trajectory path (.kitti.txt / .tum.txt pick the format).
        #[arg(long)]
        out: PathBuf,
        /// Ground-truth trajectory for translation scaling (defaults to the
        /// manifest's gt entry).
        #[arg(long)]
        gt: Option<PathBuf>,
        #[arg(long)]
        matcher_weights: Option<PathBuf>,
        #[arg(long)]
        fusion_weights: Option<PathBuf>,
        /// Output format override.
        #[arg(long, value_enum)]
        format: Option<FormatArg>,
        /// Mean-displacement keyframe threshold, pixels [default: 24].
        #[arg(long)]
        keyframe_threshold: Option<f64>,
        /// Process every n-th frame [default: 1].
        #[arg(long)]
        stride: Option<usize>,
        /// Config overrides, key=value (win over file values).
        #[arg(long = "set")]
        set: Vec<String>,
    },
    /// Absolute trajectory error after alignment.
    EvalAte {
        #[arg(long)]
        est: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        #[arg(long, value_enum, default_value = "sim3")]
        mode: ModeArg,
        /// Optional CSV report path.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// KITTI-style segment drift (t_rel %, r_rel deg/100m).
    EvalRpe {
        #[arg(long)]
        est: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Matching recall and MMA against reprojection geometry.
    EvalMatch {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        frame_a: u64,
        #[arg(long)]
        frame_b: u64,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        matcher_weights: Option<PathBuf>,
        #[arg(long)]
        fusion_weights: Option<PathBuf>,
        /// Reprojection tolerance for ground-truth labels, pixels.
        #[arg(long, default_value_t = 3.0)]
        reproj_tol: f64,
        #[arg(long)]
        csv: Option<PathBuf>,
        #[arg(long = "set")]
        set: Vec<String>,
    },
    /// Generate a synthetic sequence directory.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 50)]
        frames: usize,
        #[arg(long, default_value_t = 160)]
        points: usize,
        /// Camera step per frame, meters.
        #[arg(long, default_value_t = 0.4)]
        step: f64,
        #[arg(long, value_enum, default_value = "direct")]
        mode: SynthModeArg,
        /// Gaussian pixel noise on direct-mode keypoints.
        #[arg(long, default_value_t = 0.0)]
        noise_px: f64,
        #[arg(long, default_value_t = 0.0)]
        outlier_fraction: f64,
    },
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("gridvo: {e}");
        std::process::exit(1);
    }
}

fn load_config(
    path: &Option<PathBuf>,
    intrinsics: gridvo::geometry::CameraIntrinsics,
    overrides: &[String],
) -> Result<PipelineConfig> {
    let mut cfg = match path {
        Some(p) => io::load_pipeline_config(p, intrinsics)?,
        None => PipelineConfig::new(intrinsics),
    };
    for kv in overrides {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::invalid(format!("--set expects key=value, got '{kv}'")))?;
        io::apply_config_key(&mut cfg, k.trim(), v.trim())?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn load_fusion(path: &Option<PathBuf>, seed: u64) -> Result<FusionWeights> {
    match path {
        Some(p) => FusionWeights::read(p),
        None => Ok(FusionWeights::seeded(seed)),
    }
}

fn load_matcher(path: &Option<PathBuf>, seed: u64) -> Result<MatcherWeights> {
    match path {
        Some(p) => MatcherWeights::load_manifest(p),
        None => Ok(MatcherWeights::seeded(seed)),
    }
}

/// Builds per-frame features from whatever the manifest provides:
/// precomputed keypoints+descriptors, image + dense feature maps, or image
/// alone (classical provider).
fn frame_features(
    m: &SequenceManifest,
    fe: &FrameEntry,
    det: &DetectorConfig,
    fusion: &FusionWeights,
) -> Result<FrameFeatures> {
    if let (Some(kp), Some(desc)) = (&fe.keypoints, &fe.descriptors) {
        let kp = io::load_keypoints(m.resolve(kp))?;
        let descriptors = io::load_descriptors(m.resolve(desc), &kp)?;
        return Ok(FrameFeatures {
            keypoints: kp,
            descriptors,
        });
    }
    let img_path = fe
        .image
        .as_ref()
        .ok_or_else(|| Error::invalid(format!("frame {}: no descriptors and no image", fe.id)))?;
    let img = image::read_pnm(m.resolve(img_path))?;
    let keypoints = match &fe.keypoints {
        Some(p) => io::load_keypoints(m.resolve(p))?,
        None => detector::detect(&img, det)?,
    };
    let (coarse, fine) = match (&fe.coarse, &fe.fine) {
        (Some(c), Some(f)) => (
            DenseFeatureMap::new(Tensor::read(m.resolve(c))?, Stride::Coarse14)?,
            DenseFeatureMap::new(Tensor::read(m.resolve(f))?, Stride::Fine1)?,
        ),
        (None, None) => descriptor::provider_classical(&img)?,
        _ => {
            return Err(Error::invalid(format!(
                "frame {}: coarse and fine maps must be given together",
                fe.id
            )))
        }
    };
    let descriptors = descriptor::describe(&coarse, &fine, &keypoints, fusion, true)?;
    Ok(FrameFeatures {
        keypoints,
        descriptors,
    })
}

fn find_frame<'a>(m: &'a SequenceManifest, id: u64) -> Result<(usize, &'a FrameEntry)> {
    m.frames
        .iter()
        .enumerate()
        .find(|(_, f)| f.id == id)
        .ok_or_else(|| Error::invalid(format!("frame {id} not in manifest")))
}

fn match_frames(
    m: &SequenceManifest,
    cfg: &PipelineConfig,
    fa: &FrameEntry,
    fb: &FrameEntry,
    matcher_weights: &Option<PathBuf>,
    fusion_weights: &Option<PathBuf>,
    seed: u64,
) -> Result<(FrameFeatures, FrameFeatures, MatchSet)> {
    let fusion = load_fusion(fusion_weights, seed)?;
    let a = frame_features(m, fa, &cfg.detector, &fusion)?;
    let b = frame_features(m, fb, &cfg.detector, &fusion)?;
    let matches = match cfg.backend {
        Backend::MutualNn => matcher::match_mutual_nn(&a.descriptors, &b.descriptors, cfg.match_threshold)?,
        Backend::Attention => {
            let w = load_matcher(matcher_weights, seed)?;
            let (da, db) = matcher::attend(&a.descriptors, &b.descriptors, &w)?;
            let assign = matcher::assignment(&da, &db, &w)?;
            matcher::extract_matches(&assign, &da, &db, &w, cfg.match_threshold)
        }
    };
    Ok((a, b, matches))
}

fn gt_pose_for(gt: &gridvo::pipeline::Trajectory, position: usize, id: u64) -> Result<Pose> {
    if let Some(e) = gt.entries.iter().find(|e| e.frame_id == id) {
        return Ok(e.pose.clone());
    }
    gt.entries
        .get(position)
        .map(|e| e.pose.clone())
        .ok_or_else(|| Error::invalid(format!("no ground-truth pose for frame {id}")))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Detect {
            image,
            out,
            kernel_size,
            sigma,
            patch,
            nms_radius,
            threshold,
            top_k,
        } => {
            let cfg = DetectorConfig {
                kernel_size,
                sigma,
                patch,
                nms_radius,
                threshold,
                top_k,
            };
            let img = image::read_pnm(&image)?;
            let kp = detector::detect(&img, &cfg)?;
            io::save_keypoints(&kp, &out)?;
            println!("{} keypoints -> {}", kp.len(), out.display());
        }
        Command::Describe {
            image,
            keypoints,
            out,
            fusion_weights,
        } => {
            let img = image::read_pnm(&image)?;
            let kp = io::load_keypoints(&keypoints)?;
            let fusion = load_fusion(&fusion_weights, cli.seed)?;
            let (coarse, fine) = descriptor::provider_classical(&img)?;
            let desc = descriptor::describe(&coarse, &fine, &kp, &fusion, true)?;
            io::save_descriptors(&desc, &out)?;
            println!("{} descriptors ({}-d) -> {}", desc.len(), desc.dim(), out.display());
        }
        Command::Match {
            manifest,
            frame_a,
            frame_b,
            config,
            matcher_weights,
            fusion_weights,
            out,
            set,
        } => {
            let m = io::load_manifest(&manifest)?;
            let cfg = load_config(&config, m.intrinsics.clone(), &set)?;
            let (_, fa) = find_frame(&m, frame_a)?;
            let (_, fb) = find_frame(&m, frame_b)?;
            let (a, b, matches) =
                match_frames(&m, &cfg, fa, fb, &matcher_weights, &fusion_weights, cli.seed)?;
            let mut text = String::new();
            for pm in &matches.pairs {
                text.push_str(&format!("{} {} {} {}\n", pm.a, pm.b, pm.weight, pm.probability));
            }
            match &out {
                Some(p) => std::fs::write(p, &text)?,
                None => print!("{text}"),
            }
            println!("{} matches", matches.len());
            if matches.len() >= 8 {
                let k = &cfg.intrinsics;
                let mut ca = Vec::new();
                let mut cb = Vec::new();
                let mut w = Vec::new();
                for pm in &matches.pairs {
                    let (ua, va) = a.keypoints.pixel(pm.a);
                    let (ub, vb) = b.keypoints.pixel(pm.b);
                    ca.push(k.calibrate(&Vector2::new(ua, va)));
                    cb.push(k.calibrate(&Vector2::new(ub, vb)));
                    w.push(pm.weight);
                }
                let rel = estimate_relative_pose(&CorrespondenceSet::new(ca, cb, w)?)?;
                let aa = rel.rotation.log();
                println!(
                    "relative pose (frame {frame_b} from {frame_a}): rotation axis-angle [{} {} {}], translation direction [{} {} {}]",
                    aa.x, aa.y, aa.z, rel.direction.x, rel.direction.y, rel.direction.z
                );
            } else {
                println!("too few matches for a pose estimate");
            }
        }
        Command::Odometry {
            manifest,
            config,
            out,
            gt,
            matcher_weights,
            fusion_weights,
            format,
            keyframe_threshold,
            stride,
            set,
        } => {
            let m = io::load_manifest(&manifest)?;
            let mut cfg = load_config(&config, m.intrinsics.clone(), &set)?;
            if let Some(t) = keyframe_threshold {
                cfg.keyframe_threshold = t;
            }
            if let Some(s) = stride {
                cfg.stride = s;
            }
            cfg.validate()?;
            let gt_path = gt.or_else(|| m.gt_trajectory.as_ref().map(|p| m.resolve(p)));
            let gt_traj = match &gt_path {
                Some(p) => Some(io::load_trajectory(p, TrajectoryFormat::from_path(p))?.trajectory),
                None => None,
            };
            if cfg.scale_source == ScaleSource::GroundTruth && gt_traj.is_none() {
                return Err(Error::invalid(
                    "ground-truth scaling needs --gt or a manifest gt entry (or scale_source = unit)",
                ));
            }
            let mw = match cfg.backend {
                Backend::Attention => Some(load_matcher(&matcher_weights, cli.seed)?),
                Backend::MutualNn => None,
            };
            let fusion = Arc::new(load_fusion(&fusion_weights, cli.seed)?);
            let manifest = Arc::new(m);
            let det = cfg.detector.clone();
            let stride = cfg.stride;
            let mut engine = VoEngine::new(cfg, mw)?;
            let frames: Vec<(usize, FrameEntry)> = manifest
                .frames
                .iter()
                .enumerate()
                .step_by(stride)
                .map(|(i, f)| (i, f.clone()))
                .collect();
            let load = |fe: &FrameEntry| frame_features(&manifest, fe, &det, &fusion);
            let mut pending: Option<Result<FrameFeatures>> = None;
            for (idx, (pos, fe)) in frames.iter().enumerate() {
                let features = match pending.take() {
                    Some(f) => f?,
                    None => load(fe)?,
                };
                // prefetch the next frame's features while this one solves
                if cli.threads > 1 {
                    if let Some((_, next)) = frames.get(idx + 1) {
                        let manifest = Arc::clone(&manifest);
                        let fusion = Arc::clone(&fusion);
                        let det = det.clone();
                        let next = next.clone();
                        let handle = std::thread::spawn(move || {
                            frame_features(&manifest, &next, &det, &fusion)
                        });
                        let gt_abs = gt_traj
                            .as_ref()
                            .map(|t| gt_pose_for(t, *pos, fe.id))
                            .transpose()?;
                        engine.step(fe.id, fe.timestamp, features, gt_abs.as_ref())?;
                        pending = Some(handle.join().map_err(|_| Error::invalid("prefetch thread panicked"))?);
                        continue;
                    }
                }
                let gt_abs = gt_traj
                    .as_ref()
                    .map(|t| gt_pose_for(t, *pos, fe.id))
                    .transpose()?;
                engine.step(fe.id, fe.timestamp, features, gt_abs.as_ref())?;
            }
            let fmt = match format {
                Some(FormatArg::Kitti) => TrajectoryFormat::Kitti,
                Some(FormatArg::Tum) => TrajectoryFormat::Tum,
                None => TrajectoryFormat::from_path(&out),
            };
            io::save_trajectory(engine.trajectory(), &out, fmt)?;
            let traj = engine.trajectory();
            let untracked = traj.entries.iter().filter(|e| !e.tracked).count();
            let keyframes = traj.entries.iter().filter(|e| e.keyframe).count();
            println!(
                "{} frames ({} keyframes, {} untracked) -> {}",
                traj.len(),
                keyframes,
                untracked,
                out.display()
            );
        }
        Command::EvalAte { est, gt, mode, csv } => {
            let e = io::load_trajectory(&est, TrajectoryFormat::from_path(&est))?.trajectory;
            let g = io::load_trajectory(&gt, TrajectoryFormat::from_path(&gt))?.trajectory;
            let (mode, name) = match mode {
                ModeArg::Se3 => (AlignmentMode::Se3, "se3"),
                ModeArg::Sim3 => (AlignmentMode::Sim3, "sim3"),
            };
            let value = eval::ate(&e, &g, mode)?;
            println!("ATE ({name}): {value:.6} m");
            if let Some(p) = csv {
                let mut rep = MetricReport::default();
                rep.push(format!("ate_{name}"), est.display().to_string(), value);
                std::fs::write(p, rep.to_csv())?;
            }
        }
        Command::EvalRpe { est, gt, csv } => {
            let e = io::load_trajectory(&est, TrajectoryFormat::from_path(&est))?.trajectory;
            let g = io::load_trajectory(&gt, TrajectoryFormat::from_path(&gt))?.trajectory;
            let rep = eval::kitti_drift(&e, &g)?;
            if rep.is_empty() {
                println!("trajectory shorter than 100 m: no drift segments");
            } else {
                println!("t_rel: {:.4} %  r_rel: {:.4} deg/100m  ({} segments)", rep.t_rel, rep.r_rel, rep.segments);
                for (len, v) in &rep.per_length {
                    match v {
                        Some((t, r)) => println!("  {len:>5} m: t {t:.4} %  r {r:.4} deg/100m"),
                        None => println!("  {len:>5} m: (no segments)"),
                    }
                }
            }
            if let Some(p) = csv {
                let mut out = MetricReport::default();
                let seq = est.display().to_string();
                out.push("t_rel", &seq, rep.t_rel);
                out.push("r_rel", &seq, rep.r_rel);
                std::fs::write(p, out.to_csv())?;
            }
        }
        Command::EvalMatch {
            manifest,
            frame_a,
            frame_b,
            config,
            matcher_weights,
            fusion_weights,
            reproj_tol,
            csv,
            set,
        } => {
            let m = io::load_manifest(&manifest)?;
            let cfg = load_config(&config, m.intrinsics.clone(), &set)?;
            let (pos_a, fa) = find_frame(&m, frame_a)?;
            let (pos_b, fb) = find_frame(&m, frame_b)?;
            let depth_path = fa
                .depth
                .as_ref()
                .ok_or_else(|| Error::invalid(format!("frame {frame_a} has no depth map")))?;
            let depth = Tensor::read(m.resolve(depth_path))?;
            let gt_path = m
                .gt_trajectory
                .as_ref()
                .map(|p| m.resolve(p))
                .ok_or_else(|| Error::invalid("manifest has no ground-truth trajectory"))?;
            let gt = io::load_trajectory(&gt_path, TrajectoryFormat::from_path(&gt_path))?.trajectory;
            let pa = gt_pose_for(&gt, pos_a, frame_a)?;
            let pb = gt_pose_for(&gt, pos_b, frame_b)?;
            let pose_b_from_a = pb.inverse().compose(&pa);
            let (a, b, matches) =
                match_frames(&m, &cfg, fa, fb, &matcher_weights, &fusion_weights, cli.seed)?;
            let labels = supervision::gt_correspondences(
                &a.keypoints,
                &depth,
                &pose_b_from_a,
                &cfg.intrinsics,
                &b.keypoints,
                reproj_tol,
            )?;
            let rep = eval::matching_metrics(
                &matches,
                &a.keypoints,
                &b.keypoints,
                &labels,
                &depth,
                &pose_b_from_a,
                &cfg.intrinsics,
            )?;
            println!(
                "predicted: {}  gt matchable: {}  unverifiable: {}{}",
                rep.predicted,
                labels.matched.len(),
                rep.unverifiable,
                if rep.empty_prediction { "  [empty prediction]" } else { "" }
            );
            println!("recall@5px: {:.4}", rep.recall_5);
            for (tau, v) in &rep.mma {
                println!("MMA@{tau}px: {v:.4}");
            }
            if let Some(p) = csv {
                let mut out = MetricReport::default();
                let seq = manifest.display().to_string();
                out.push("recall_5", &seq, rep.recall_5);
                for (tau, v) in &rep.mma {
                    out.push(format!("mma_{tau}"), &seq, *v);
                }
                std::fs::write(p, out.to_csv())?;
            }
        }
        Command::Synth {
            out,
            frames,
            points,
            step,
            mode,
            noise_px,
            outlier_fraction,
        } => {
            let mut scene = SyntheticScene::corridor(cli.seed, points, frames, step)?;
            scene.noise.pixel_std = noise_px;
            scene.noise.outlier_fraction = outlier_fraction;
            let mode = match mode {
                SynthModeArg::Render => SynthMode::Render,
                SynthModeArg::Direct => SynthMode::Direct,
            };
            let seq = synth::generate_sequence(&scene, mode, cli.seed)?;
            let manifest = synth::write_sequence(&seq, &out)?;
            println!("{} frames -> {}", seq.frames.len(), manifest.display());
        }
    }
    Ok(())
}
