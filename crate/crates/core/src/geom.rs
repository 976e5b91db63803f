//! Rotation representations and the handful of geometric primitives every
//! other module leans on.
//!
//! Three parameterizations are used side by side:
//!
//! * [`RotationMatrix`], a validated element of SO(3);
//! * [`UnitQuaternion`], stored scalar-first as `[w1, w2, w3, w4]`;
//! * [`AxisAngle`], an axis on the upper half-sphere `b₂ ≥ 0` given by two
//!   spherical angles plus a rotation angle.
//!
//! The quaternion-to-matrix map is the usual Hamilton one,
//!
//! ```text
//! ⎡ w1²+w2²−w3²−w4²   2(w2w3−w1w4)     2(w2w4+w1w3)   ⎤
//! ⎢ 2(w2w3+w1w4)      w1²+w3²−w2²−w4²  2(w3w4−w1w2)   ⎥
//! ⎣ 2(w2w4−w1w3)      2(w3w4+w1w2)     w1²+w4²−w2²−w3²⎦
//! ```
//!
//! and the quadratic forms of [`crate::refine`] are built against exactly this
//! layout.
//!
//! Rotation error is measured as the geodesic angle on SO(3), in degrees.

use nalgebra::{Matrix3, Vector3, Vector4};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{invalid, Error, Result};

/// A point (or free vector) in ℝ³.
pub type Point3 = Vector3<f64>;

const ORTHO_TOL: f64 = 1e-9;
const UNIT_QUAT_TOL: f64 = 1e-12;
const UNIT_AXIS_TOL: f64 = 1e-9;

/// A 3×3 orthogonal matrix with determinant +1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RotationMatrix(Matrix3<f64>);

impl RotationMatrix {
    /// Validates `m` (`mᵀm = I` and `det m = 1`, both to 1e-9).
    pub fn new(m: Matrix3<f64>) -> Result<Self> {
        if m.iter().any(|v| !v.is_finite()) {
            return Err(invalid("rotation matrix has non-finite entries"));
        }
        let gram_err = (m.transpose() * m - Matrix3::identity()).amax();
        if gram_err > ORTHO_TOL {
            return Err(invalid(format!(
                "matrix is not orthogonal (max |RᵀR − I| = {gram_err:e})"
            )));
        }
        let det = m.determinant();
        if (det - 1.0).abs() > ORTHO_TOL {
            return Err(invalid(format!("matrix determinant is {det}, expected +1")));
        }
        Ok(Self(m))
    }

    pub fn identity() -> Self {
        Self(Matrix3::identity())
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    pub fn transpose(&self) -> Self {
        Self(self.0.transpose())
    }

    pub fn apply(&self, p: &Point3) -> Point3 {
        self.0 * p
    }

    /// The nine entries in row-major order.
    pub fn to_row_major(&self) -> [f64; 9] {
        let m = &self.0;
        [
            m[(0, 0)],
            m[(0, 1)],
            m[(0, 2)],
            m[(1, 0)],
            m[(1, 1)],
            m[(1, 2)],
            m[(2, 0)],
            m[(2, 1)],
            m[(2, 2)],
        ]
    }

    pub fn from_row_major(v: &[f64]) -> Result<Self> {
        if v.len() != 9 {
            return Err(invalid(format!("expected 9 matrix entries, got {}", v.len())));
        }
        Self::new(Matrix3::from_row_slice(v))
    }
}

impl Serialize for RotationMatrix {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_row_major().serialize(s)
    }
}

impl<'de> Deserialize<'de> for RotationMatrix {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let v = Vec::<f64>::deserialize(d)?;
        Self::from_row_major(&v).map_err(serde::de::Error::custom)
    }
}

/// A unit quaternion, scalar-first. `w` and `-w` describe the same rotation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UnitQuaternion(Vector4<f64>);

impl UnitQuaternion {
    /// Wraps `[w1, w2, w3, w4]`, which must have unit norm to 1e-12.
    pub fn new(w: [f64; 4]) -> Result<Self> {
        let v = Vector4::from(w);
        if v.iter().any(|c| !c.is_finite()) {
            return Err(invalid("quaternion has non-finite components"));
        }
        let n = v.norm();
        if (n - 1.0).abs() > UNIT_QUAT_TOL {
            return Err(invalid(format!("quaternion norm is {n}, expected 1")));
        }
        Ok(Self(v))
    }

    /// Projects a nonzero 4-vector onto the unit sphere.
    pub fn normalize(v: Vector4<f64>) -> Result<Self> {
        let n = v.norm();
        if !(n.is_finite() && n > 0.0) {
            return Err(invalid("cannot normalize a zero or non-finite 4-vector"));
        }
        Ok(Self(v / n))
    }

    pub(crate) fn from_vector_unchecked(v: Vector4<f64>) -> Self {
        Self(v)
    }

    pub fn identity() -> Self {
        Self(Vector4::new(1.0, 0.0, 0.0, 0.0))
    }

    /// Quaternion of the rotation by `omega` about the unit vector `axis`.
    pub fn from_axis_angle(axis: &Vector3<f64>, omega: f64) -> Result<Self> {
        check_unit_axis(axis)?;
        let (s, c) = (omega / 2.0).sin_cos();
        Self::normalize(Vector4::new(c, s * axis.x, s * axis.y, s * axis.z))
    }

    pub fn as_vector(&self) -> &Vector4<f64> {
        &self.0
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.0[0], self.0[1], self.0[2], self.0[3]]
    }

    pub fn neg(&self) -> Self {
        Self(-self.0)
    }

    /// The representative of `±w` whose first nonzero component is positive.
    pub fn canonical(&self) -> Self {
        match self.0.iter().find(|c| **c != 0.0) {
            Some(c) if *c < 0.0 => self.neg(),
            _ => *self,
        }
    }

    /// `min(‖w − w*‖, ‖w + w*‖)`, the distance on S³ modulo sign. Never
    /// exceeds √2.
    pub fn distance(&self, other: &UnitQuaternion) -> f64 {
        (self.0 - other.0).norm().min((self.0 + other.0).norm())
    }
}

impl Serialize for UnitQuaternion {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_array().serialize(s)
    }
}

/// Axis-angle parameterization with the axis on the half-sphere `b₂ ≥ 0`:
/// `b = [sin θ cos φ, sin θ sin φ, cos θ]` with `θ, φ ∈ [0, π]`, and a rotation
/// angle `ω ∈ [0, 2π]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AxisAngle {
    pub theta: f64,
    pub phi: f64,
    pub omega: f64,
}

impl AxisAngle {
    pub fn axis(&self) -> Point3 {
        axis_from_angles(self.theta, self.phi)
    }

    pub fn to_rotation(&self) -> RotationMatrix {
        rodrigues_unchecked(&self.axis(), self.omega)
    }
}

/// Unit axis `[sin θ cos φ, sin θ sin φ, cos θ]`.
pub fn axis_from_angles(theta: f64, phi: f64) -> Point3 {
    let (st, ct) = theta.sin_cos();
    let (sp, cp) = phi.sin_cos();
    Vector3::new(st * cp, st * sp, ct)
}

/// Cross-product matrix: `skew(b) * a == b × a`.
pub fn skew(b: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -b.z, b.y, b.z, 0.0, -b.x, -b.y, b.x, 0.0)
}

fn check_unit_axis(axis: &Vector3<f64>) -> Result<()> {
    let n = axis.norm();
    if !n.is_finite() || (n - 1.0).abs() > UNIT_AXIS_TOL {
        return Err(invalid(format!("rotation axis has norm {n}, expected 1")));
    }
    Ok(())
}

/// `R = bbᵀ + [b]ₓ sin ω + (I − bbᵀ) cos ω`.
pub fn rodrigues(axis: &Vector3<f64>, omega: f64) -> Result<RotationMatrix> {
    check_unit_axis(axis)?;
    if !omega.is_finite() {
        return Err(invalid("rotation angle is not finite"));
    }
    Ok(rodrigues_unchecked(axis, omega))
}

pub(crate) fn rodrigues_unchecked(axis: &Vector3<f64>, omega: f64) -> RotationMatrix {
    let bbt = axis * axis.transpose();
    let (s, c) = omega.sin_cos();
    RotationMatrix(bbt + skew(axis) * s + (Matrix3::identity() - bbt) * c)
}

/// The rotation represented by `w`.
pub fn quat_to_rotation(w: &UnitQuaternion) -> RotationMatrix {
    let [w1, w2, w3, w4] = w.to_array();
    RotationMatrix(Matrix3::new(
        w1 * w1 + w2 * w2 - w3 * w3 - w4 * w4,
        2.0 * (w2 * w3 - w1 * w4),
        2.0 * (w2 * w4 + w1 * w3),
        2.0 * (w2 * w3 + w1 * w4),
        w1 * w1 + w3 * w3 - w2 * w2 - w4 * w4,
        2.0 * (w3 * w4 - w1 * w2),
        2.0 * (w2 * w4 - w1 * w3),
        2.0 * (w3 * w4 + w1 * w2),
        w1 * w1 + w4 * w4 - w2 * w2 - w3 * w3,
    ))
}

/// Inverse of [`quat_to_rotation`], returned in canonical sign.
///
/// Uses Shepperd's branch on the largest diagonal term so the division is
/// always by a quantity of at least 1/2.
pub fn rotation_to_quat(r: &RotationMatrix) -> UnitQuaternion {
    let m = r.matrix();
    let trace = m.trace();
    let diag = [m[(0, 0)], m[(1, 1)], m[(2, 2)]];
    let v = if trace >= diag[0] && trace >= diag[1] && trace >= diag[2] {
        let s = 2.0 * (1.0 + trace).max(0.0).sqrt();
        Vector4::new(
            s / 4.0,
            (m[(2, 1)] - m[(1, 2)]) / s,
            (m[(0, 2)] - m[(2, 0)]) / s,
            (m[(1, 0)] - m[(0, 1)]) / s,
        )
    } else if diag[0] >= diag[1] && diag[0] >= diag[2] {
        let s = 2.0 * (1.0 + diag[0] - diag[1] - diag[2]).max(0.0).sqrt();
        Vector4::new(
            (m[(2, 1)] - m[(1, 2)]) / s,
            s / 4.0,
            (m[(0, 1)] + m[(1, 0)]) / s,
            (m[(0, 2)] + m[(2, 0)]) / s,
        )
    } else if diag[1] >= diag[2] {
        let s = 2.0 * (1.0 - diag[0] + diag[1] - diag[2]).max(0.0).sqrt();
        Vector4::new(
            (m[(0, 2)] - m[(2, 0)]) / s,
            (m[(0, 1)] + m[(1, 0)]) / s,
            s / 4.0,
            (m[(1, 2)] + m[(2, 1)]) / s,
        )
    } else {
        let s = 2.0 * (1.0 - diag[0] - diag[1] + diag[2]).max(0.0).sqrt();
        Vector4::new(
            (m[(1, 0)] - m[(0, 1)]) / s,
            (m[(0, 2)] + m[(2, 0)]) / s,
            (m[(1, 2)] + m[(2, 1)]) / s,
            s / 4.0,
        )
    };
    UnitQuaternion(v / v.norm()).canonical()
}

/// Geodesic distance `arccos((tr(R_estᵀ R_true) − 1)/2)` in degrees, in
/// `[0, 180]`.
///
/// Evaluated as `2·atan2(sin(ϑ/2), cos(ϑ/2))` with `‖R_est − R_true‖_F =
/// 2√2·sin(ϑ/2)` and `1 + tr = 4cos²(ϑ/2)`. The plain arccos form loses about
/// half the significant digits near zero, where its floor is ~1e-6 degrees.
pub fn rotation_error_deg(r_est: &RotationMatrix, r_true: &RotationMatrix) -> f64 {
    let t = (r_est.matrix().transpose() * r_true.matrix()).trace();
    let half_sin = (r_est.matrix() - r_true.matrix()).norm() / (2.0 * std::f64::consts::SQRT_2);
    let half_cos = (1.0 + t).max(0.0).sqrt() / 2.0;
    (2.0 * half_sin.atan2(half_cos)).to_degrees().clamp(0.0, 180.0)
}

/// Least-squares rotation `argmin Σ‖yᵢ − R xᵢ‖²` over SO(3) for pairs `(y, x)`.
///
/// SVD of `H = Σ y xᵀ = U S Vᵀ`, then `R = U diag(1, 1, det(UVᵀ)) Vᵀ`. Fails
/// unless the pairs determine the rotation: at least two pairs and a
/// cross-covariance of rank ≥ 2.
pub fn kabsch(pairs: &[(Point3, Point3)]) -> Result<RotationMatrix> {
    if pairs.len() < 2 {
        return Err(Error::Degenerate(format!(
            "need at least 2 point pairs, got {}",
            pairs.len()
        )));
    }
    let h = pairs
        .iter()
        .fold(Matrix3::zeros(), |acc, (y, x)| acc + y * x.transpose());
    kabsch_from_covariance(&h)
}

pub(crate) fn kabsch_from_covariance(h: &Matrix3<f64>) -> Result<RotationMatrix> {
    if h.iter().any(|v| !v.is_finite()) {
        return Err(invalid("non-finite point coordinates"));
    }
    let svd = h.svd(true, true);
    let sv = svd.singular_values;
    let (Some(u), Some(v_t)) = (svd.u, svd.v_t) else {
        return Err(Error::Internal("SVD did not return singular vectors".into()));
    };
    // nalgebra sorts singular values in decreasing order.
    if sv[0] <= 0.0 || sv[1] <= 1e-9 * sv[0].max(1.0) {
        return Err(Error::Degenerate(format!(
            "cross-covariance has rank < 2 (singular values {:e}, {:e}, {:e})",
            sv[0], sv[1], sv[2]
        )));
    }
    let d = (u * v_t).determinant().signum();
    let r = u * Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, d)) * v_t;
    Ok(RotationMatrix(r))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;
    use std::f64::consts::{FRAC_PI_2, PI};

    fn rand_unit3(rng: &mut impl Rng) -> Point3 {
        loop {
            let v = Vector3::from_fn(|_, _| rng.sample::<f64, _>(StandardNormal));
            if v.norm() > 1e-6 {
                return v.normalize();
            }
        }
    }

    fn rand_quat(rng: &mut impl Rng) -> UnitQuaternion {
        UnitQuaternion::normalize(Vector4::from_fn(|_, _| rng.sample(StandardNormal))).unwrap()
    }

    fn rand_rotation(rng: &mut impl Rng) -> RotationMatrix {
        quat_to_rotation(&rand_quat(rng))
    }

    #[test]
    fn rodrigues_quarter_turn_about_z() {
        let r = rodrigues(&Vector3::z(), FRAC_PI_2).unwrap();
        assert_abs_diff_eq!(r.apply(&Vector3::x()), Vector3::y(), epsilon = 1e-15);
    }

    #[test]
    fn rodrigues_zero_angle_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..10 {
            let r = rodrigues(&rand_unit3(&mut rng), 0.0).unwrap();
            assert_abs_diff_eq!(*r.matrix(), Matrix3::identity(), epsilon = 1e-15);
        }
    }

    #[test]
    fn rodrigues_half_turn_about_x() {
        // bbᵀ = e1e1ᵀ, sin π ≈ 0, cos π = −1 → diag(1, −1, −1)
        let r = rodrigues(&Vector3::x(), PI).unwrap();
        assert_abs_diff_eq!(
            *r.matrix(),
            Matrix3::from_diagonal(&Vector3::new(1.0, -1.0, -1.0)),
            epsilon = 1e-15
        );
    }

    #[test]
    fn rodrigues_rejects_non_unit_axis() {
        assert!(matches!(
            rodrigues(&Vector3::new(1.0, 1.0, 0.0), 0.3),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn quat_identity_and_k() {
        assert_eq!(*quat_to_rotation(&UnitQuaternion::identity()).matrix(), Matrix3::identity());
        let k = UnitQuaternion::new([0.0, 0.0, 0.0, 1.0]).unwrap();
        assert_eq!(
            *quat_to_rotation(&k).matrix(),
            Matrix3::from_diagonal(&Vector3::new(-1.0, -1.0, 1.0))
        );
    }

    #[test]
    fn quat_rejects_non_unit() {
        assert!(UnitQuaternion::new([1.0, 1.0, 0.0, 0.0]).is_err());
        assert!(UnitQuaternion::new([1.0 + 1e-10, 0.0, 0.0, 0.0]).is_err());
    }

    #[test]
    fn quat_to_rotation_is_rotation_and_sign_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..1000 {
            let w = rand_quat(&mut rng);
            let r = quat_to_rotation(&w);
            assert!(RotationMatrix::new(*r.matrix()).is_ok());
            assert_eq!(r, quat_to_rotation(&w.neg()));
        }
    }

    #[test]
    fn rodrigues_agrees_with_quaternion() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..1000 {
            let b = rand_unit3(&mut rng);
            let omega = rng.gen_range(0.0..2.0 * PI);
            let q = UnitQuaternion::from_axis_angle(&b, omega).unwrap();
            let r1 = quat_to_rotation(&q);
            let r2 = rodrigues(&b, omega).unwrap();
            assert_abs_diff_eq!(*r1.matrix(), *r2.matrix(), epsilon = 1e-9);
        }
    }

    #[test]
    fn rotation_to_quat_examples() {
        assert_eq!(rotation_to_quat(&RotationMatrix::identity()), UnitQuaternion::identity());
        let r = RotationMatrix::new(Matrix3::from_diagonal(&Vector3::new(-1.0, -1.0, 1.0))).unwrap();
        assert_abs_diff_eq!(
            *rotation_to_quat(&r).as_vector(),
            Vector4::new(0.0, 0.0, 0.0, 1.0),
            epsilon = 1e-15
        );
    }

    #[test]
    fn rotation_to_quat_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut worst: f64 = 0.0;
        for _ in 0..1000 {
            let r = rand_rotation(&mut rng);
            let w = rotation_to_quat(&r);
            let first = w.to_array().into_iter().find(|c| *c != 0.0).unwrap();
            assert!(first > 0.0);
            worst = worst.max((quat_to_rotation(&w).matrix() - r.matrix()).amax());
        }
        assert!(worst < 1e-9, "worst round trip error {worst:e}");
    }

    #[test]
    fn canonical_picks_first_nonzero_positive() {
        let w = UnitQuaternion::new([0.0, -0.6, 0.8, 0.0]).unwrap();
        assert_eq!(w.canonical().to_array(), [0.0, 0.6, -0.8, 0.0]);
    }

    #[test]
    fn rotation_error_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let r = rand_rotation(&mut rng);
        assert_eq!(rotation_error_deg(&r, &r), 0.0);
        let quarter = rodrigues(&Vector3::z(), FRAC_PI_2).unwrap();
        assert_abs_diff_eq!(
            rotation_error_deg(&RotationMatrix::identity(), &quarter),
            90.0,
            epsilon = 1e-12
        );
        for _ in 0..10 {
            let b = rand_unit3(&mut rng);
            let e = rotation_error_deg(&RotationMatrix::identity(), &rodrigues(&b, 0.1).unwrap());
            assert_abs_diff_eq!(e, 0.1_f64.to_degrees(), epsilon = 1e-9);
        }
    }

    #[test]
    fn rotation_error_is_a_metric() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..1000 {
            let (a, b, c) = (rand_rotation(&mut rng), rand_rotation(&mut rng), rand_rotation(&mut rng));
            let ab = rotation_error_deg(&a, &b);
            assert!((0.0..=180.0).contains(&ab));
            let t = (a.matrix().transpose() * b.matrix()).trace();
            assert_abs_diff_eq!(ab, ((t - 1.0) / 2.0).clamp(-1.0, 1.0).acos().to_degrees(), epsilon = 1e-5);
            assert_abs_diff_eq!(ab, rotation_error_deg(&b, &a), epsilon = 1e-6);
            assert!(ab <= rotation_error_deg(&a, &c) + rotation_error_deg(&c, &b) + 1e-6);
        }
    }

    #[test]
    fn kabsch_two_pairs_recovers_rotation() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..100 {
            let r = rand_rotation(&mut rng);
            let pairs: Vec<_> = (0..2)
                .map(|_| {
                    let x = Vector3::from_fn(|_, _| rng.sample::<f64, _>(StandardNormal));
                    (r.apply(&x), x)
                })
                .collect();
            let est = kabsch(&pairs).unwrap();
            assert_abs_diff_eq!(*est.matrix(), *r.matrix(), epsilon = 1e-9);
        }
    }

    #[test]
    fn kabsch_identity_pairs() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let pairs: Vec<_> = (0..5)
            .map(|_| {
                let x = Vector3::from_fn(|_, _| rng.sample::<f64, _>(StandardNormal));
                (x, x)
            })
            .collect();
        assert_abs_diff_eq!(*kabsch(&pairs).unwrap().matrix(), Matrix3::identity(), epsilon = 1e-12);
    }

    #[test]
    fn kabsch_many_noiseless_pairs() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..20 {
            let r = rand_rotation(&mut rng);
            let pairs: Vec<_> = (0..100)
                .map(|_| {
                    let x = Vector3::from_fn(|_, _| rng.sample::<f64, _>(StandardNormal));
                    (r.apply(&x), x)
                })
                .collect();
            assert!(rotation_error_deg(&kabsch(&pairs).unwrap(), &r) < 1e-9);
        }
    }

    #[test]
    fn kabsch_is_order_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let r = rand_rotation(&mut rng);
        let mut pairs: Vec<_> = (0..30)
            .map(|_| {
                let x = Vector3::from_fn(|_, _| rng.sample::<f64, _>(StandardNormal));
                let e = Vector3::from_fn(|_, _| 0.05 * rng.sample::<f64, _>(StandardNormal));
                (r.apply(&x) + e, x)
            })
            .collect();
        let a = kabsch(&pairs).unwrap();
        pairs.reverse();
        pairs.swap(3, 17);
        let b = kabsch(&pairs).unwrap();
        assert_abs_diff_eq!(*a.matrix(), *b.matrix(), epsilon = 1e-12);
    }

    #[test]
    fn kabsch_degenerate_inputs() {
        let x = Vector3::new(1.0, 2.0, 3.0);
        assert!(matches!(kabsch(&[(x, x)]), Err(Error::Degenerate(_))));
        // parallel points only: rank one
        assert!(matches!(kabsch(&[(x, x), (2.0 * x, 2.0 * x)]), Err(Error::Degenerate(_))));
    }

    #[test]
    fn quaternion_distance_bounded() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..1000 {
            let (a, b) = (rand_quat(&mut rng), rand_quat(&mut rng));
            assert!(a.distance(&b) <= 2f64.sqrt() + 1e-15);
            assert_abs_diff_eq!(a.distance(&b), a.neg().distance(&b), epsilon = 1e-15);
        }
    }
}
