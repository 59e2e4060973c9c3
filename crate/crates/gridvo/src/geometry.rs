//! Rigid-body and projective primitives shared by the whole pipeline.

use nalgebra::{Matrix3, Matrix4, Rotation3, UnitQuaternion, Vector2, Vector3};

use crate::error::{Error, Result};

const ORTHONORMALITY_TOL: f64 = 1e-9;

/// 3x3 orthonormal matrix with determinant +1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rotation(Matrix3<f64>);

impl Rotation {
    pub fn identity() -> Self {
        Rotation(Matrix3::identity())
    }

    /// Validates orthonormality (R R^T = I and det R = +1, both within 1e-9).
    pub fn from_matrix(m: Matrix3<f64>) -> Result<Self> {
        let ortho_err = (m * m.transpose() - Matrix3::identity()).norm();
        if ortho_err > ORTHONORMALITY_TOL {
            return Err(Error::invalid(format!(
                "rotation not orthonormal (|R R^T - I| = {ortho_err:.3e})"
            )));
        }
        let det = m.determinant();
        if (det - 1.0).abs() > ORTHONORMALITY_TOL {
            return Err(Error::invalid(format!("rotation det = {det}, expected +1")));
        }
        Ok(Rotation(m))
    }

    /// Projects an approximately orthonormal matrix back onto SO(3) via SVD.
    pub fn from_matrix_reorthonormalized(m: Matrix3<f64>) -> Result<Self> {
        let svd = m.svd(true, true);
        let u = svd.u.ok_or_else(|| Error::invalid("svd failed"))?;
        let vt = svd.v_t.ok_or_else(|| Error::invalid("svd failed"))?;
        let mut r = u * vt;
        if r.determinant() < 0.0 {
            let mut u = u;
            u.column_mut(2).neg_mut();
            r = u * vt;
        }
        Rotation::from_matrix(r)
    }

    pub fn from_axis_angle(axis_angle: Vector3<f64>) -> Self {
        Rotation(*Rotation3::from_scaled_axis(axis_angle).matrix())
    }

    /// Axis-angle (so(3)) vector of this rotation. Extraction goes through
    /// the unit quaternion, which stays stable for angles near pi.
    pub fn log(&self) -> Vector3<f64> {
        let rot = Rotation3::from_matrix_unchecked(self.0);
        UnitQuaternion::from_rotation_matrix(&rot).scaled_axis()
    }

    pub fn angle(&self) -> f64 {
        self.log().norm()
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    pub fn inverse(&self) -> Self {
        Rotation(self.0.transpose())
    }

    pub fn rotate(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.0 * v
    }
}

impl std::ops::Mul for Rotation {
    type Output = Rotation;
    fn mul(self, rhs: Rotation) -> Rotation {
        Rotation(self.0 * rhs.0)
    }
}

/// Rigid transform with an optional positive scale (Sim(3) container).
///
/// Acts on points as `p -> scale * R * p + t`. `scale == 1` gives SE(3).
#[derive(Debug, Clone, Copy)]
pub struct Pose {
    pub rotation: Rotation,
    pub translation: Vector3<f64>,
    pub scale: f64,
}

impl Pose {
    pub fn identity() -> Self {
        Pose {
            rotation: Rotation::identity(),
            translation: Vector3::zeros(),
            scale: 1.0,
        }
    }

    pub fn se3(rotation: Rotation, translation: Vector3<f64>) -> Self {
        Pose {
            rotation,
            translation,
            scale: 1.0,
        }
    }

    pub fn sim3(rotation: Rotation, translation: Vector3<f64>, scale: f64) -> Result<Self> {
        if !(scale > 0.0) {
            return Err(Error::invalid(format!("pose scale must be > 0, got {scale}")));
        }
        Ok(Pose {
            rotation,
            translation,
            scale,
        })
    }

    /// `self ∘ other`: applies `other` first, then `self`. Scales multiply.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose {
            rotation: self.rotation * other.rotation,
            translation: self.scale * self.rotation.rotate(&other.translation) + self.translation,
            scale: self.scale * other.scale,
        }
    }

    pub fn inverse(&self) -> Pose {
        let r_inv = self.rotation.inverse();
        Pose {
            rotation: r_inv,
            translation: -(1.0 / self.scale) * r_inv.rotate(&self.translation),
            scale: 1.0 / self.scale,
        }
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.scale * self.rotation.rotate(p) + self.translation
    }

    pub fn to_homogeneous(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0)
            .copy_from(&(self.scale * self.rotation.matrix()));
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }
}

/// Pinhole camera parameters for a rectified image.
#[derive(Debug, Clone, Copy)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: usize, height: usize) -> Result<Self> {
        if !(fx > 0.0 && fy > 0.0) {
            return Err(Error::invalid("focal lengths must be positive"));
        }
        if !(cx > 0.0 && cx < width as f64 && cy > 0.0 && cy < height as f64) {
            return Err(Error::invalid("principal point must lie inside the image"));
        }
        Ok(CameraIntrinsics {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        })
    }

    /// Pinhole projection to pixel coordinates (u, v). Fails on depth <= 0.
    pub fn project(&self, p: &Vector3<f64>) -> Result<Vector2<f64>> {
        if p.z <= 0.0 {
            return Err(Error::NonPositiveDepth(p.z));
        }
        Ok(Vector2::new(
            self.fx * p.x / p.z + self.cx,
            self.fy * p.y / p.z + self.cy,
        ))
    }

    /// Pixel (u, v) to calibrated coordinates ((u-cx)/fx, (v-cy)/fy).
    pub fn calibrate(&self, uv: &Vector2<f64>) -> Vector2<f64> {
        Vector2::new((uv.x - self.cx) / self.fx, (uv.y - self.cy) / self.fy)
    }

    pub fn unproject(&self, uv: &Vector2<f64>, depth: f64) -> Vector3<f64> {
        let c = self.calibrate(uv);
        Vector3::new(c.x * depth, c.y * depth, depth)
    }

    pub fn contains(&self, uv: &Vector2<f64>) -> bool {
        uv.x >= 0.0 && uv.x <= (self.width - 1) as f64 && uv.y >= 0.0 && uv.y <= (self.height - 1) as f64
    }
}

/// 3x3 rank-2 matrix with two equal nonzero singular values.
#[derive(Debug, Clone, Copy)]
pub struct EssentialMatrix(Matrix3<f64>);

impl EssentialMatrix {
    /// Validates the essential-manifold invariants: third singular value
    /// below 1e-9 relative, top two equal within 1e-6 relative.
    pub fn from_matrix(m: Matrix3<f64>) -> Result<Self> {
        let s = m.svd(false, false).singular_values;
        if s[0] <= 0.0 {
            return Err(Error::invalid("zero essential matrix"));
        }
        if s[2] / s[0] > 1e-9 {
            return Err(Error::invalid(format!(
                "essential matrix not rank 2 (s2/s0 = {:.3e})",
                s[2] / s[0]
            )));
        }
        if (s[0] - s[1]).abs() / s[0] > 1e-6 {
            return Err(Error::invalid(
                "essential matrix singular values not equal".to_string(),
            ));
        }
        Ok(EssentialMatrix(m))
    }

    /// Closest essential matrix in Frobenius norm: singular values replaced
    /// by (s, s, 0) with s the mean of the two largest. The SVD factors are
    /// re-orthonormalized first; with repeated singular values they can drift
    /// off the orthogonal group by more than the manifold tolerance.
    pub fn project(m: Matrix3<f64>) -> Result<Self> {
        let svd = m.svd(true, true);
        let mut u = svd.u.ok_or_else(|| Error::invalid("svd failed"))?;
        let mut vt = svd.v_t.ok_or_else(|| Error::invalid("svd failed"))?;
        let s = 0.5 * (svd.singular_values[0] + svd.singular_values[1]);
        if s <= 0.0 {
            return Err(Error::degenerate("zero matrix cannot be projected to essential"));
        }
        // the third column/row multiplies the zero singular value, so sign
        // flips that make the factors proper rotations leave E unchanged
        if u.determinant() < 0.0 {
            u.column_mut(2).neg_mut();
        }
        if vt.determinant() < 0.0 {
            vt.row_mut(2).neg_mut();
        }
        let u = Rotation::from_matrix_reorthonormalized(u)?;
        let vt = Rotation::from_matrix_reorthonormalized(vt)?;
        let d = Matrix3::from_diagonal(&Vector3::new(s, s, 0.0));
        EssentialMatrix::from_matrix(u.matrix() * d * vt.matrix())
    }

    /// E = [t]x R for the relative pose x2 = R x1 + t.
    pub fn from_pose(rotation: &Rotation, translation: &Vector3<f64>) -> Result<Self> {
        EssentialMatrix::from_matrix(skew(translation) * rotation.matrix())
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }
}

pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Linear two-view triangulation (DLT on the homogeneous system).
///
/// Inputs are calibrated coordinates in each camera; `pose_2_from_1` maps
/// frame-1 points into frame 2. Returns the point in frame 1 together with
/// its depth in both cameras.
pub fn triangulate(
    x1: &Vector2<f64>,
    x2: &Vector2<f64>,
    pose_2_from_1: &Pose,
) -> Result<(Vector3<f64>, f64, f64)> {
    // Ray directions in frame 1; near-parallel rays have no stable intersection.
    let d1 = Vector3::new(x1.x, x1.y, 1.0).normalize();
    let d2 = pose_2_from_1
        .rotation
        .inverse()
        .rotate(&Vector3::new(x2.x, x2.y, 1.0))
        .normalize();
    if d1.cross(&d2).norm() < 1e-12 {
        return Err(Error::degenerate("parallel rays, zero-baseline triangulation"));
    }

    // P1 = [I | 0], P2 = [R | t]; rows of A from x ~ P X.
    let r = pose_2_from_1.rotation.matrix();
    let t = pose_2_from_1.translation;
    let mut a = nalgebra::Matrix4::<f64>::zeros();
    // x1.x * P1.row(2) - P1.row(0)
    a.set_row(0, &nalgebra::RowVector4::new(-1.0, 0.0, x1.x, 0.0));
    a.set_row(1, &nalgebra::RowVector4::new(0.0, -1.0, x1.y, 0.0));
    let p2_row = |i: usize| nalgebra::RowVector4::new(r[(i, 0)], r[(i, 1)], r[(i, 2)], t[i]);
    a.set_row(2, &(x2.x * p2_row(2) - p2_row(0)));
    a.set_row(3, &(x2.y * p2_row(2) - p2_row(1)));

    let svd = a.svd(false, true);
    let vt = svd.v_t.ok_or_else(|| Error::degenerate("triangulation svd failed"))?;
    let h = vt.row(3);
    if h[3].abs() < 1e-15 {
        return Err(Error::degenerate("triangulated point at infinity"));
    }
    let point = Vector3::new(h[0] / h[3], h[1] / h[3], h[2] / h[3]);
    let depth1 = point.z;
    let depth2 = pose_2_from_1.transform_point(&point).z;
    Ok((point, depth1, depth2))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rz(deg: f64) -> Rotation {
        Rotation::from_axis_angle(Vector3::new(0.0, 0.0, deg.to_radians()))
    }

    fn random_rotation(rng: &mut impl Rng) -> Rotation {
        let axis = Vector3::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5);
        let angle = rng.gen::<f64>() * 3.0;
        Rotation::from_axis_angle(axis.normalize() * angle)
    }

    #[test]
    fn compose_identity() {
        let id = Pose::identity();
        let c = id.compose(&id);
        assert_eq!(c.translation, Vector3::zeros());
        assert_eq!(c.scale, 1.0);
        assert_relative_eq!(*c.rotation.matrix(), Matrix3::identity());
    }

    #[test]
    fn compose_inverse_is_identity() {
        let p = Pose::sim3(rz(33.0), Vector3::new(1.0, -2.0, 0.5), 1.7).unwrap();
        let c = p.compose(&p.inverse());
        assert!((c.translation.norm()) < 1e-12);
        assert!((c.scale - 1.0).abs() < 1e-12);
        assert!((c.rotation.matrix() - Matrix3::identity()).norm() < 1e-12);
    }

    #[test]
    fn compose_matches_homogeneous_product() {
        let a = Pose::se3(rz(10.0), Vector3::new(1.0, 0.0, 0.0));
        let b = Pose::se3(rz(20.0), Vector3::new(0.0, 1.0, 0.0));
        let c = a.compose(&b);
        let oracle = a.to_homogeneous() * b.to_homogeneous();
        assert_relative_eq!(c.to_homogeneous(), oracle, epsilon = 1e-12);
    }

    #[test]
    fn compose_matches_homogeneous_product_random_sim3() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let a = Pose::sim3(
                random_rotation(&mut rng),
                Vector3::new(rng.gen(), rng.gen(), rng.gen()),
                rng.gen::<f64>() + 0.5,
            )
            .unwrap();
            let b = Pose::sim3(
                random_rotation(&mut rng),
                Vector3::new(rng.gen(), rng.gen(), rng.gen()),
                rng.gen::<f64>() + 0.5,
            )
            .unwrap();
            let oracle = a.to_homogeneous() * b.to_homogeneous();
            assert_relative_eq!(a.compose(&b).to_homogeneous(), oracle, epsilon = 1e-12);
        }
    }

    #[test]
    fn log_identity_is_zero() {
        assert_eq!(Rotation::identity().log(), Vector3::zeros());
    }

    #[test]
    fn log_rz90_analytic() {
        let l = rz(90.0).log();
        assert_relative_eq!(l, Vector3::new(0.0, 0.0, std::f64::consts::FRAC_PI_2), epsilon = 1e-12);
    }

    // Rodrigues-formula oracle for exp, checked against log round trips.
    fn rodrigues(axis_angle: Vector3<f64>) -> Matrix3<f64> {
        let theta = axis_angle.norm();
        if theta == 0.0 {
            return Matrix3::identity();
        }
        let k = skew(&(axis_angle / theta));
        Matrix3::identity() + theta.sin() * k + (1.0 - theta.cos()) * (k * k)
    }

    #[test]
    fn log_exp_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..100 {
            let r = random_rotation(&mut rng);
            let back = Rotation::from_axis_angle(r.log());
            assert!((r.matrix() - back.matrix()).norm() < 1e-9);
            assert!((rodrigues(r.log()) - r.matrix()).norm() < 1e-9);
        }
    }

    #[test]
    fn log_near_pi_is_stable() {
        let r = Rotation::from_axis_angle(Vector3::new(0.0, 1.0, 0.0) * (std::f64::consts::PI - 1e-4));
        let l = r.log();
        assert_relative_eq!(l.norm(), std::f64::consts::PI - 1e-4, epsilon = 1e-9);
        assert!((Rotation::from_axis_angle(l).matrix() - r.matrix()).norm() < 1e-9);
    }

    #[test]
    fn project_principal_axis() {
        let k = CameraIntrinsics::new(100.0, 100.0, 320.0, 240.0, 640, 480).unwrap();
        let uv = k.project(&Vector3::new(0.0, 0.0, 1.0)).unwrap();
        assert_eq!(uv, Vector2::new(320.0, 240.0));
    }

    #[test]
    fn project_analytic_pinhole() {
        let k = CameraIntrinsics::new(100.0, 100.0, 320.0, 240.0, 640, 480).unwrap();
        let uv = k.project(&Vector3::new(1.0, 0.0, 2.0)).unwrap();
        assert_eq!(uv, Vector2::new(370.0, 240.0));
    }

    #[test]
    fn project_rejects_nonpositive_depth() {
        let k = CameraIntrinsics::new(100.0, 100.0, 320.0, 240.0, 640, 480).unwrap();
        assert!(k.project(&Vector3::new(0.0, 0.0, -1.0)).is_err());
        assert!(k.project(&Vector3::new(0.0, 0.0, 0.0)).is_err());
    }

    #[test]
    fn project_matches_homogeneous_oracle() {
        let k = CameraIntrinsics::new(123.0, 145.0, 320.0, 240.0, 640, 480).unwrap();
        let kmat = Matrix3::new(k.fx, 0.0, k.cx, 0.0, k.fy, k.cy, 0.0, 0.0, 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let p = Vector3::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5, rng.gen::<f64>() + 0.1);
            let h = kmat * p;
            let oracle = Vector2::new(h.x / h.z, h.y / h.z);
            assert_relative_eq!(k.project(&p).unwrap(), oracle, epsilon = 1e-12);
        }
    }

    #[test]
    fn triangulate_recovers_forward_point() {
        let pose = Pose::se3(Rotation::identity(), Vector3::new(-1.0, 0.0, 0.0));
        let p = Vector3::new(0.0, 0.0, 5.0);
        let x1 = Vector2::new(p.x / p.z, p.y / p.z);
        let q = pose.transform_point(&p);
        let x2 = Vector2::new(q.x / q.z, q.y / q.z);
        let (rec, d1, d2) = triangulate(&x1, &x2, &pose).unwrap();
        assert_relative_eq!(rec, p, epsilon = 1e-9);
        assert!(d1 > 0.0 && d2 > 0.0);
    }

    #[test]
    fn triangulate_rejects_zero_baseline() {
        let pose = Pose::identity();
        let x = Vector2::new(0.1, 0.2);
        assert!(triangulate(&x, &x, &pose).is_err());
    }

    #[test]
    fn triangulate_random_scenes() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut max_err: f64 = 0.0;
        for _ in 0..50 {
            let rot = Rotation::from_axis_angle(Vector3::new(
                0.05 * (rng.gen::<f64>() - 0.5),
                0.05 * (rng.gen::<f64>() - 0.5),
                0.05 * (rng.gen::<f64>() - 0.5),
            ));
            let pose = Pose::se3(rot, Vector3::new(rng.gen::<f64>() + 0.2, rng.gen::<f64>() - 0.5, 0.1));
            let p = Vector3::new(rng.gen::<f64>() * 4.0 - 2.0, rng.gen::<f64>() * 4.0 - 2.0, rng.gen::<f64>() * 5.0 + 3.0);
            let q = pose.transform_point(&p);
            if q.z <= 0.1 {
                continue;
            }
            let x1 = Vector2::new(p.x / p.z, p.y / p.z);
            let x2 = Vector2::new(q.x / q.z, q.y / q.z);
            let (rec, d1, d2) = triangulate(&x1, &x2, &pose).unwrap();
            max_err = max_err.max((rec - p).norm());
            assert!(d1 > 0.0 && d2 > 0.0);
        }
        assert!(max_err < 1e-8, "max triangulation error {max_err}");
    }

    #[test]
    fn essential_from_pure_translation() {
        let e = EssentialMatrix::from_pose(&Rotation::identity(), &Vector3::new(1.0, 0.0, 0.0)).unwrap();
        let expected = Matrix3::new(0.0, 0.0, 0.0, 0.0, 0.0, -1.0, 0.0, 1.0, 0.0);
        assert_relative_eq!(*e.matrix(), expected, epsilon = 1e-12);
    }

    #[test]
    fn essential_rejects_full_rank() {
        assert!(EssentialMatrix::from_matrix(Matrix3::identity()).is_err());
    }
}
