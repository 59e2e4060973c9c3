//! Confidence-weighted eight-point pose estimation: epipolar design matrix,
//! SVD solve, rank-2 projection, fourfold decomposition and cheirality
//! selection.

use nalgebra::{DMatrix, Matrix3, Vector2, Vector3};

use crate::error::{Error, Result};
use crate::geometry::{triangulate, EssentialMatrix, Pose, Rotation};

/// Calibrated point pairs (frame 1 <-> frame 2) with nonnegative weights.
#[derive(Debug, Clone)]
pub struct CorrespondenceSet {
    pub a: Vec<Vector2<f64>>,
    pub b: Vec<Vector2<f64>>,
    pub weights: Vec<f64>,
}

impl CorrespondenceSet {
    pub fn new(a: Vec<Vector2<f64>>, b: Vec<Vector2<f64>>, weights: Vec<f64>) -> Result<Self> {
        if a.len() != b.len() || a.len() != weights.len() {
            return Err(Error::ShapeMismatch {
                expected: format!("{} points and weights on both sides", a.len()),
                got: format!("{}/{}", b.len(), weights.len()),
            });
        }
        if a.len() < 8 {
            return Err(Error::invalid(format!(
                "eight-point solve needs >= 8 correspondences, got {}",
                a.len()
            )));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::invalid("weights must be finite and >= 0"));
        }
        if weights.iter().filter(|w| **w > 0.0).count() < 8 {
            return Err(Error::invalid("need at least 8 strictly positive weights"));
        }
        Ok(CorrespondenceSet { a, b, weights })
    }

    pub fn len(&self) -> usize {
        self.a.len()
    }

    pub fn is_empty(&self) -> bool {
        self.a.is_empty()
    }
}

/// Rotation plus unit translation direction (scale unobservable).
#[derive(Debug, Clone, Copy)]
pub struct RelativePose {
    pub rotation: Rotation,
    pub direction: Vector3<f64>,
}

impl RelativePose {
    pub fn to_pose(&self, translation_norm: f64) -> Pose {
        Pose::se3(self.rotation, self.direction * translation_norm)
    }
}

/// One epipolar row per correspondence, for flat(E) in row-major order
/// (e11..e33): row . flat(E) = x_b^T E x_a with x = (x, y, 1).
///
/// The coefficient of E_rc is b_r * a_c, expanded from the bilinear form.
pub fn build_design_matrix(c: &CorrespondenceSet) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = c.len();
    let mut phi = DMatrix::zeros(n, 9);
    for i in 0..n {
        let a = [c.a[i].x, c.a[i].y, 1.0];
        let b = [c.b[i].x, c.b[i].y, 1.0];
        for r in 0..3 {
            for col in 0..3 {
                phi[(i, 3 * r + col)] = b[r] * a[col];
            }
        }
    }
    let mut weighted = phi.clone();
    for i in 0..n {
        for j in 0..9 {
            weighted[(i, j)] *= c.weights[i];
        }
    }
    (phi, weighted)
}

/// Weighted eight-point solve: flat(E) is the right-singular vector of the
/// smallest singular value of diag(w) Phi, projected onto the essential
/// manifold.
pub fn solve_essential(c: &CorrespondenceSet) -> Result<EssentialMatrix> {
    let (_, weighted) = build_design_matrix(c);
    let svd = weighted.svd(false, true);
    let vt = svd.v_t.as_ref().ok_or_else(|| Error::degenerate("svd failed"))?;
    let sv = &svd.singular_values;
    // effective rank must be >= 8 for a unique (up to scale) null vector
    if sv.len() < 9 || sv[7] <= 1e-12 * sv[0] {
        return Err(Error::degenerate(format!(
            "rank-deficient epipolar system (s8/s1 = {:.3e})",
            sv[7] / sv[0]
        )));
    }
    let flat = vt.row(8);
    let e = Matrix3::new(
        flat[0], flat[1], flat[2], flat[3], flat[4], flat[5], flat[6], flat[7], flat[8],
    );
    EssentialMatrix::project(e)
}

/// Enumerates the four (R, +-t) candidates from the SVD of E and picks the
/// one with the largest weighted count of correspondences triangulating in
/// front of both cameras.
pub fn decompose_and_select(e: &EssentialMatrix, c: &CorrespondenceSet) -> Result<RelativePose> {
    let svd = e.matrix().svd(true, true);
    let mut u = svd.u.ok_or_else(|| Error::degenerate("svd failed"))?;
    let mut vt = svd.v_t.ok_or_else(|| Error::degenerate("svd failed"))?;
    if u.determinant() < 0.0 {
        u.column_mut(2).neg_mut();
    }
    if vt.determinant() < 0.0 {
        vt.row_mut(2).neg_mut();
    }
    let w = Matrix3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0);
    let r1 = Rotation::from_matrix_reorthonormalized(u * w * vt)?;
    let r2 = Rotation::from_matrix_reorthonormalized(u * w.transpose() * vt)?;
    let t: Vector3<f64> = u.column(2).into_owned().normalize();

    let candidates = [(r1, t), (r1, -t), (r2, t), (r2, -t)];
    let total_weight: f64 = c.weights.iter().sum();
    let mut best: Option<(f64, RelativePose)> = None;
    for (rot, dir) in candidates {
        let pose = Pose::se3(rot, dir);
        let mut vote = 0.0;
        for i in 0..c.len() {
            if let Ok((_, d1, d2)) = triangulate(&c.a[i], &c.b[i], &pose) {
                if d1 > 0.0 && d2 > 0.0 {
                    vote += c.weights[i];
                }
            }
        }
        if best.map_or(true, |(v, _)| vote > v) {
            best = Some((
                vote,
                RelativePose {
                    rotation: rot,
                    direction: dir,
                },
            ));
        }
    }
    let (vote, pose) = best.unwrap();
    if vote <= 0.5 * total_weight {
        return Err(Error::degenerate(format!(
            "no decomposition candidate wins a positive-depth majority ({vote:.2}/{total_weight:.2})"
        )));
    }
    Ok(pose)
}

/// Convenience: solve then decompose.
pub fn estimate_relative_pose(c: &CorrespondenceSet) -> Result<RelativePose> {
    let e = solve_essential(c)?;
    decompose_and_select(&e, c)
}

/// Sampson distance of a correspondence to the epipolar constraint, in the
/// same (calibrated) units as the input points.
pub fn sampson_distance(e: &EssentialMatrix, a: &Vector2<f64>, b: &Vector2<f64>) -> f64 {
    let m = e.matrix();
    let xa = Vector3::new(a.x, a.y, 1.0);
    let xb = Vector3::new(b.x, b.y, 1.0);
    let ea = m * xa;
    let etb = m.transpose() * xb;
    let num = xb.dot(&ea);
    let den = ea.x * ea.x + ea.y * ea.y + etb.x * etb.x + etb.y * etb.y;
    if den <= 0.0 {
        return f64::INFINITY;
    }
    (num * num / den).sqrt()
}

/// RANSAC settings for [`estimate_relative_pose_robust`]. The inlier
/// threshold is a Sampson distance in calibrated coordinates (pixels
/// divided by focal length).
#[derive(Debug, Clone, Copy)]
pub struct RansacOptions {
    pub iterations: usize,
    pub inlier_threshold: f64,
    pub seed: u64,
}

impl Default for RansacOptions {
    fn default() -> Self {
        RansacOptions {
            iterations: 192,
            inlier_threshold: 1.5 / 400.0,
            seed: 0x9e37_79b9,
        }
    }
}

/// Robust pose estimation: minimal eight-point hypotheses scored by Sampson
/// inlier count, followed by a confidence-weighted refit in which outliers
/// get weight zero. Returns the pose and the effective per-correspondence
/// weights. Falls back to the plain weighted solve when no hypothesis
/// gathers eight inliers.
pub fn estimate_relative_pose_robust(
    c: &CorrespondenceSet,
    opts: &RansacOptions,
) -> Result<(RelativePose, Vec<f64>)> {
    use rand::SeedableRng;

    if opts.iterations == 0 {
        return Ok((estimate_relative_pose(c)?, c.weights.clone()));
    }
    let candidates: Vec<usize> = (0..c.len()).filter(|&i| c.weights[i] > 0.0).collect();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(opts.seed);
    let mut best: Option<(usize, Vec<bool>)> = None;
    // 9 samples per hypothesis: the thin SVD of an 8x9 design matrix has no
    // ninth right-singular vector, so the solver needs >= 9 rows
    let sample_size = 9;
    for _ in 0..opts.iterations {
        if candidates.len() < sample_size {
            break;
        }
        let picks = rand::seq::index::sample(&mut rng, candidates.len(), sample_size);
        let idx: Vec<usize> = picks.iter().map(|i| candidates[i]).collect();
        let minimal = CorrespondenceSet::new(
            idx.iter().map(|&i| c.a[i]).collect(),
            idx.iter().map(|&i| c.b[i]).collect(),
            vec![1.0; idx.len()],
        )?;
        let e = match solve_essential(&minimal) {
            Ok(e) => e,
            Err(Error::DegenerateGeometry(_)) => continue,
            Err(err) => return Err(err),
        };
        let mask: Vec<bool> = (0..c.len())
            .map(|i| {
                c.weights[i] > 0.0
                    && sampson_distance(&e, &c.a[i], &c.b[i]) < opts.inlier_threshold
            })
            .collect();
        let count = mask.iter().filter(|&&m| m).count();
        if best.as_ref().map_or(true, |(n, _)| count > *n) {
            best = Some((count, mask));
        }
    }
    match best {
        Some((count, mask)) if count >= 8 => {
            let weights: Vec<f64> = c
                .weights
                .iter()
                .zip(&mask)
                .map(|(&w, &m)| if m { w } else { 0.0 })
                .collect();
            let masked = CorrespondenceSet::new(c.a.clone(), c.b.clone(), weights.clone())?;
            Ok((estimate_relative_pose(&masked)?, weights))
        }
        // no consensus: keep the unrobust solve so callers still get the
        // plain weighted behaviour on pathological inputs
        _ => Ok((estimate_relative_pose(c)?, c.weights.clone())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rz(deg: f64) -> Rotation {
        Rotation::from_axis_angle(Vector3::new(0.0, 0.0, deg.to_radians()))
    }

    /// Synthetic projection oracle: random points in front of both cameras.
    pub(crate) fn synthetic_correspondences(
        rng: &mut impl Rng,
        pose_2_from_1: &Pose,
        n: usize,
    ) -> CorrespondenceSet {
        let mut a = Vec::with_capacity(n);
        let mut b = Vec::with_capacity(n);
        while a.len() < n {
            let p = Vector3::new(
                rng.gen::<f64>() * 4.0 - 2.0,
                rng.gen::<f64>() * 4.0 - 2.0,
                rng.gen::<f64>() * 6.0 + 4.0,
            );
            let q = pose_2_from_1.transform_point(&p);
            if q.z <= 0.5 {
                continue;
            }
            a.push(Vector2::new(p.x / p.z, p.y / p.z));
            b.push(Vector2::new(q.x / q.z, q.y / q.z));
        }
        CorrespondenceSet::new(a, b, vec![1.0; n]).unwrap()
    }

    #[test]
    fn design_row_for_origin_points() {
        let mut a = vec![Vector2::zeros(); 8];
        let b = vec![Vector2::zeros(); 8];
        // vary the other rows so construction succeeds; row 0 stays at origin
        for (i, p) in a.iter_mut().enumerate().skip(1) {
            *p = Vector2::new(i as f64 * 0.1, -(i as f64) * 0.05);
        }
        let c = CorrespondenceSet::new(a, b, vec![1.0; 8]).unwrap();
        let (phi, _) = build_design_matrix(&c);
        let expected = [0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0];
        for (j, e) in expected.iter().enumerate() {
            assert_eq!(phi[(0, j)], *e);
        }
    }

    #[test]
    fn unit_weights_leave_design_matrix_unchanged() {
        let mut rng = ChaCha8Rng::seed_from_u64(50);
        let pose = Pose::se3(rz(5.0), Vector3::new(1.0, 0.0, 0.1));
        let c = synthetic_correspondences(&mut rng, &pose, 12);
        let (phi, weighted) = build_design_matrix(&c);
        assert_eq!(phi, weighted);
    }

    #[test]
    fn design_row_matches_bilinear_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(51);
        let pose = Pose::se3(rz(8.0), Vector3::new(0.6, -0.2, 0.1));
        let c = synthetic_correspondences(&mut rng, &pose, 10);
        let (phi, _) = build_design_matrix(&c);
        let e = Matrix3::from_fn(|_, _| rng.gen::<f64>() - 0.5);
        let flat = [
            e[(0, 0)], e[(0, 1)], e[(0, 2)], e[(1, 0)], e[(1, 1)], e[(1, 2)], e[(2, 0)], e[(2, 1)], e[(2, 2)],
        ];
        for i in 0..c.len() {
            let row_dot: f64 = (0..9).map(|j| phi[(i, j)] * flat[j]).sum();
            let xa = Vector3::new(c.a[i].x, c.a[i].y, 1.0);
            let xb = Vector3::new(c.b[i].x, c.b[i].y, 1.0);
            let direct = (xb.transpose() * e * xa)[(0, 0)];
            assert!((row_dot - direct).abs() < 1e-12);
        }
    }

    #[test]
    fn recovers_essential_direction() {
        let mut rng = ChaCha8Rng::seed_from_u64(52);
        let rot = rz(10.0);
        let t = Vector3::new(1.0, 0.0, 0.0);
        let pose = Pose::se3(rot, t);
        let c = synthetic_correspondences(&mut rng, &pose, 20);
        let e = solve_essential(&c).unwrap();
        let gt = EssentialMatrix::from_pose(&rot, &t).unwrap();
        let ef = e.matrix().as_slice();
        let gf = gt.matrix().as_slice();
        let dot: f64 = ef.iter().zip(gf).map(|(a, b)| a * b).sum();
        let cos = dot.abs()
            / (ef.iter().map(|v| v * v).sum::<f64>().sqrt() * gf.iter().map(|v| v * v).sum::<f64>().sqrt());
        assert!(cos > 1.0 - 1e-9, "cos angle {cos}");
    }

    #[test]
    fn pure_translation_essential() {
        let mut rng = ChaCha8Rng::seed_from_u64(53);
        let pose = Pose::se3(Rotation::identity(), Vector3::new(1.0, 0.0, 0.0));
        let c = synthetic_correspondences(&mut rng, &pose, 24);
        let e = solve_essential(&c).unwrap();
        // E ~ [t]x: only entries (1,2) and (2,1) nonzero, opposite signs
        let m = e.matrix() / e.matrix()[(2, 1)];
        let expected = Matrix3::new(0.0, 0.0, 0.0, 0.0, 0.0, -1.0, 0.0, 1.0, 0.0);
        assert!((m - expected).norm() < 1e-9, "E = {m}");
    }

    #[test]
    fn zero_weight_outliers_equal_inlier_only_solve() {
        let mut rng = ChaCha8Rng::seed_from_u64(54);
        let pose = Pose::se3(rz(6.0), Vector3::new(0.8, 0.1, 0.2));
        let inliers = synthetic_correspondences(&mut rng, &pose, 30);
        let mut a = inliers.a.clone();
        let mut b = inliers.b.clone();
        let mut w = vec![1.0; 30];
        for _ in 0..10 {
            a.push(Vector2::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5));
            b.push(Vector2::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5));
            w.push(0.0);
        }
        let mixed = CorrespondenceSet::new(a, b, w).unwrap();
        let e_mixed = solve_essential(&mixed).unwrap();
        let e_clean = solve_essential(&inliers).unwrap();
        let sign = if (e_mixed.matrix().as_slice().iter().zip(e_clean.matrix().as_slice()))
            .map(|(x, y)| x * y)
            .sum::<f64>()
            > 0.0
        {
            1.0
        } else {
            -1.0
        };
        assert!((e_mixed.matrix() - sign * e_clean.matrix()).norm() < 1e-9);
    }

    #[test]
    fn cheirality_selects_true_pose() {
        let mut rng = ChaCha8Rng::seed_from_u64(55);
        for _ in 0..100 {
            let axis = Vector3::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5)
                .normalize();
            let rot = Rotation::from_axis_angle(axis * (rng.gen::<f64>() * 0.4));
            let t = Vector3::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5, rng.gen::<f64>() * 0.4)
                .normalize();
            let pose = Pose::se3(rot, t);
            let c = synthetic_correspondences(&mut rng, &pose, 25);
            let rel = estimate_relative_pose(&c).unwrap();
            let rot_err = (rel.rotation.inverse() * rot).angle();
            let t_err = rel.direction.dot(&t).clamp(-1.0, 1.0).acos();
            assert!(rot_err < 1e-6, "rotation error {rot_err}");
            assert!(t_err < 1e-6, "translation angle error {t_err}");
        }
    }

    #[test]
    fn negating_translation_flips_depths() {
        let mut rng = ChaCha8Rng::seed_from_u64(56);
        let rot = rz(4.0);
        let t = Vector3::new(1.0, 0.0, 0.0);
        let pose = Pose::se3(rot, t);
        let c = synthetic_correspondences(&mut rng, &pose, 10);
        let flipped = Pose::se3(rot, -t);
        for i in 0..c.len() {
            let (_, _, d2) = triangulate(&c.a[i], &c.b[i], &pose).unwrap();
            let (_, _, d2f) = triangulate(&c.a[i], &c.b[i], &flipped).unwrap();
            assert!(d2 > 0.0);
            assert!(d2f < 0.0, "depth did not flip: {d2f}");
        }
    }

    #[test]
    fn weight_scale_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(57);
        let pose = Pose::se3(rz(7.0), Vector3::new(0.5, -0.3, 0.1));
        let c = synthetic_correspondences(&mut rng, &pose, 16);
        let scaled = CorrespondenceSet::new(c.a.clone(), c.b.clone(), vec![37.5; 16]).unwrap();
        let e1 = solve_essential(&c).unwrap();
        let e2 = solve_essential(&scaled).unwrap();
        let sign = if e1.matrix().as_slice().iter().zip(e2.matrix().as_slice()).map(|(x, y)| x * y).sum::<f64>() > 0.0 { 1.0 } else { -1.0 };
        assert!((e1.matrix() - sign * e2.matrix()).norm() < 1e-10);
        let p1 = decompose_and_select(&e1, &c).unwrap();
        let p2 = decompose_and_select(&e2, &scaled).unwrap();
        assert!((p1.rotation.inverse() * p2.rotation).angle() < 1e-10);
        assert!((p1.direction - p2.direction).norm() < 1e-10);
    }

    #[test]
    fn residual_rms_on_noiseless_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(58);
        let pose = Pose::se3(rz(9.0), Vector3::new(0.9, 0.2, 0.05));
        let c = synthetic_correspondences(&mut rng, &pose, 40);
        let e = solve_essential(&c).unwrap();
        let mut ss = 0.0;
        for i in 0..c.len() {
            let xa = Vector3::new(c.a[i].x, c.a[i].y, 1.0);
            let xb = Vector3::new(c.b[i].x, c.b[i].y, 1.0);
            let r = (xb.transpose() * e.matrix() * xa)[(0, 0)];
            ss += r * r;
        }
        assert!((ss / c.len() as f64).sqrt() < 1e-9);
    }

    #[test]
    fn noise_monotonicity_statistical() {
        let mut rng = ChaCha8Rng::seed_from_u64(59);
        let fx = 400.0;
        let median_err = |noise_px: f64, rng: &mut ChaCha8Rng| -> f64 {
            let mut errs = Vec::new();
            for _ in 0..200 {
                let rot = rz(rng.gen::<f64>() * 10.0);
                let t = Vector3::new(1.0, rng.gen::<f64>() - 0.5, 0.2).normalize();
                let pose = Pose::se3(rot, t);
                let mut c = synthetic_correspondences(rng, &pose, 30);
                for p in c.a.iter_mut().chain(c.b.iter_mut()) {
                    p.x += crate::numeric::randn(rng) * noise_px / fx;
                    p.y += crate::numeric::randn(rng) * noise_px / fx;
                }
                if let Ok(rel) = estimate_relative_pose(&c) {
                    errs.push((rel.rotation.inverse() * rot).angle());
                }
            }
            errs.sort_by(f64::total_cmp);
            errs[errs.len() / 2]
        };
        let low = median_err(0.1, &mut rng);
        let high = median_err(0.5, &mut rng);
        assert!(high > low, "median rot err at 0.5px ({high}) <= at 0.1px ({low})");
    }

    #[test]
    fn sampson_zero_on_exact_correspondences() {
        let mut rng = ChaCha8Rng::seed_from_u64(60);
        let rot = rz(7.0);
        let t = Vector3::new(0.8, -0.1, 0.2);
        let pose = Pose::se3(rot, t);
        let c = synthetic_correspondences(&mut rng, &pose, 20);
        let e = EssentialMatrix::from_pose(&rot, &t).unwrap();
        for i in 0..c.len() {
            assert!(sampson_distance(&e, &c.a[i], &c.b[i]) < 1e-12);
        }
    }

    #[test]
    fn ransac_without_outliers_equals_plain_solve() {
        let mut rng = ChaCha8Rng::seed_from_u64(61);
        let pose = Pose::se3(rz(6.0), Vector3::new(0.7, 0.2, 0.1));
        let c = synthetic_correspondences(&mut rng, &pose, 25);
        let plain = estimate_relative_pose(&c).unwrap();
        let (robust, weights) = estimate_relative_pose_robust(&c, &RansacOptions::default()).unwrap();
        assert_eq!(weights, c.weights, "no correspondence should be rejected");
        assert!((plain.rotation.inverse() * robust.rotation).angle() < 1e-12);
        assert!((plain.direction - robust.direction).norm() < 1e-12);
    }

    #[test]
    fn ransac_recovers_pose_despite_gross_outliers() {
        let mut rng = ChaCha8Rng::seed_from_u64(62);
        for _ in 0..20 {
            let rot = rz(rng.gen::<f64>() * 8.0);
            let t = Vector3::new(1.0, rng.gen::<f64>() - 0.5, 0.2).normalize();
            let pose = Pose::se3(rot, t);
            let clean = synthetic_correspondences(&mut rng, &pose, 30);
            let mut a = clean.a.clone();
            let mut b = clean.b.clone();
            for _ in 0..10 {
                a.push(Vector2::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5));
                b.push(Vector2::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5));
            }
            let n = a.len();
            let c = CorrespondenceSet::new(a, b, vec![1.0; n]).unwrap();
            // noiseless inliers sit at machine-precision Sampson distance,
            // so a tight gate excludes every random outlier and the refit
            // reproduces the clean solve exactly
            let opts = RansacOptions {
                inlier_threshold: 1e-6,
                ..RansacOptions::default()
            };
            let (rel, weights) = estimate_relative_pose_robust(&c, &opts).unwrap();
            assert!(weights[..30].iter().all(|&w| w == 1.0));
            assert!(weights[30..].iter().all(|&w| w == 0.0));
            let rot_err = (rel.rotation.inverse() * rot).angle();
            let t_err = rel.direction.dot(&t).clamp(-1.0, 1.0).acos();
            assert!(rot_err < 1e-6, "rotation error {rot_err}");
            assert!(t_err < 1e-6, "translation angle error {t_err}");
        }
    }

    #[test]
    fn ransac_outlier_weights_are_zeroed() {
        let mut rng = ChaCha8Rng::seed_from_u64(63);
        let pose = Pose::se3(rz(5.0), Vector3::new(0.9, 0.0, 0.1));
        let clean = synthetic_correspondences(&mut rng, &pose, 24);
        let mut a = clean.a.clone();
        let mut b = clean.b.clone();
        // planted outliers: pair each point with a far-away partner
        for i in 0..8 {
            a.push(clean.a[i] + Vector2::new(0.4, -0.3));
            b.push(clean.b[(i + 11) % 24]);
        }
        let n = a.len();
        let c = CorrespondenceSet::new(a, b, vec![1.0; n]).unwrap();
        let (_, weights) = estimate_relative_pose_robust(&c, &RansacOptions::default()).unwrap();
        assert!(weights[24..].iter().all(|&w| w == 0.0), "weights {weights:?}");
    }

    #[test]
    fn ransac_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(64);
        let pose = Pose::se3(rz(6.0), Vector3::new(0.7, 0.1, 0.2));
        let mut c = synthetic_correspondences(&mut rng, &pose, 30);
        for p in c.a.iter_mut().chain(c.b.iter_mut()) {
            p.x += crate::numeric::randn(&mut rng) * 1e-3;
            p.y += crate::numeric::randn(&mut rng) * 1e-3;
        }
        let (r1, w1) = estimate_relative_pose_robust(&c, &RansacOptions::default()).unwrap();
        let (r2, w2) = estimate_relative_pose_robust(&c, &RansacOptions::default()).unwrap();
        assert_eq!(w1, w2);
        assert_eq!(r1.direction, r2.direction);
        assert_eq!(r1.rotation.angle(), r2.rotation.angle());
    }

    #[test]
    fn rejects_too_few_points() {
        let a = vec![Vector2::zeros(); 5];
        assert!(CorrespondenceSet::new(a.clone(), a, vec![1.0; 5]).is_err());
    }
}
