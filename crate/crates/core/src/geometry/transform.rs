use std::fmt;
use std::ops::Mul;

use nalgebra::{Matrix3, Matrix4, Rotation3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Drift above which a rotation is re-projected onto SO(3).
const ORTHO_TOLERANCE: f64 = 1e-9;

/// A proper rigid motion `x -> R x + t`.
///
/// Serialized as a row-major homogeneous 4x4 matrix.
#[derive(Clone, Copy, PartialEq)]
#[derive(Serialize, Deserialize)]
#[serde(into = "[f64; 16]", try_from = "[f64; 16]")]
pub struct RigidTransform {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    /// Builds a transform, re-orthonormalizing the rotation when it has
    /// drifted slightly. Reflections and grossly non-orthogonal matrices
    /// are rejected.
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        if rotation.iter().chain(translation.iter()).any(|v| !v.is_finite()) {
            return Err(Error::param("transform", "non-finite entry"));
        }
        let drift = orthogonality_drift(&rotation);
        if drift > 1e-3 {
            return Err(Error::param(
                "transform",
                format!("rotation is not orthonormal (drift {drift:e})"),
            ));
        }
        if rotation.determinant() < 0.0 {
            return Err(Error::param("transform", "rotation is a reflection"));
        }
        Ok(Self::from_parts_normalized(rotation, translation))
    }

    pub(crate) fn from_parts_normalized(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Self {
        let rotation = if orthogonality_drift(&rotation) > ORTHO_TOLERANCE {
            nearest_rotation(&rotation)
        } else {
            rotation
        };
        Self {
            rotation,
            translation,
        }
    }

    pub fn from_translation(x: f64, y: f64, z: f64) -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::new(x, y, z),
        }
    }

    pub fn from_rotation(rotation: &Rotation3<f64>) -> Self {
        Self::from_parts_normalized(*rotation.matrix(), Vector3::zeros())
    }

    /// Rotation of `angle` radians about `axis` (need not be unit length).
    pub fn from_axis_angle(axis: &Vector3<f64>, angle: f64) -> Self {
        let axis = nalgebra::Unit::new_normalize(*axis);
        Self::from_rotation(&Rotation3::from_axis_angle(&axis, angle))
    }

    pub fn rot_x(angle: f64) -> Self {
        Self::from_axis_angle(&Vector3::x(), angle)
    }

    pub fn rot_y(angle: f64) -> Self {
        Self::from_axis_angle(&Vector3::y(), angle)
    }

    pub fn rot_z(angle: f64) -> Self {
        Self::from_axis_angle(&Vector3::z(), angle)
    }

    pub fn from_quaternion(q: &UnitQuaternion<f64>, translation: Vector3<f64>) -> Self {
        Self::from_parts_normalized(*q.to_rotation_matrix().matrix(), translation)
    }

    /// Exponential map of a twist `(omega, v)`, with the rotation part
    /// applied about the origin: `exp([omega]x) x + v`.
    pub fn from_twist(omega: &Vector3<f64>, v: &Vector3<f64>) -> Self {
        let rotation = Rotation3::new(*omega);
        Self::from_parts_normalized(*rotation.matrix(), *v)
    }

    pub fn from_matrix(m: &Matrix4<f64>) -> Result<Self> {
        let bottom = [m[(3, 0)], m[(3, 1)], m[(3, 2)], m[(3, 3)]];
        if bottom != [0.0, 0.0, 0.0, 1.0] {
            return Err(Error::param("transform", "last row must be [0, 0, 0, 1]"));
        }
        Self::new(
            m.fixed_view::<3, 3>(0, 0).into_owned(),
            m.fixed_view::<3, 1>(0, 3).into_owned(),
        )
    }

    pub fn to_matrix(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    pub fn to_row_major(&self) -> [f64; 16] {
        let m = self.to_matrix();
        std::array::from_fn(|i| m[(i / 4, i % 4)])
    }

    pub fn from_row_major(values: &[f64; 16]) -> Result<Self> {
        Self::from_matrix(&Matrix4::from_row_slice(values))
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    /// `self * other`: applies `other` first, then `self`.
    pub fn compose(&self, other: &RigidTransform) -> RigidTransform {
        Self::from_parts_normalized(
            self.rotation * other.rotation,
            self.rotation * other.translation + self.translation,
        )
    }

    pub fn inverse(&self) -> RigidTransform {
        let rt = self.rotation.transpose();
        Self {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    #[inline]
    pub fn apply_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    #[inline]
    pub fn apply_vector(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * v
    }

    /// Angle of the rotation part in `[0, pi]`.
    pub fn rotation_angle(&self) -> f64 {
        let c = ((self.rotation.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
        // acos loses precision near 0 and pi; use the skew part there.
        let skew = Vector3::new(
            self.rotation[(2, 1)] - self.rotation[(1, 2)],
            self.rotation[(0, 2)] - self.rotation[(2, 0)],
            self.rotation[(1, 0)] - self.rotation[(0, 1)],
        );
        let s = 0.5 * skew.norm();
        s.atan2(c)
    }

    /// Largest absolute entry-wise difference of the homogeneous matrices.
    pub fn max_abs_diff(&self, other: &RigidTransform) -> f64 {
        (self.to_matrix() - other.to_matrix()).abs().max()
    }
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl Mul for RigidTransform {
    type Output = RigidTransform;

    fn mul(self, rhs: RigidTransform) -> RigidTransform {
        self.compose(&rhs)
    }
}

impl Mul<&RigidTransform> for &RigidTransform {
    type Output = RigidTransform;

    fn mul(self, rhs: &RigidTransform) -> RigidTransform {
        self.compose(rhs)
    }
}

impl fmt::Debug for RigidTransform {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("RigidTransform")
            .field("rows", &self.to_row_major())
            .finish()
    }
}

impl From<RigidTransform> for [f64; 16] {
    fn from(t: RigidTransform) -> Self {
        t.to_row_major()
    }
}

impl TryFrom<[f64; 16]> for RigidTransform {
    type Error = Error;

    fn try_from(values: [f64; 16]) -> Result<Self> {
        Self::from_row_major(&values)
    }
}

/// Free-function form of [`RigidTransform::compose`].
pub fn compose(t1: &RigidTransform, t2: &RigidTransform) -> RigidTransform {
    t1.compose(t2)
}

/// Free-function form of [`RigidTransform::inverse`].
pub fn inverse(t: &RigidTransform) -> RigidTransform {
    t.inverse()
}

fn orthogonality_drift(r: &Matrix3<f64>) -> f64 {
    let gram = (r.transpose() * r - Matrix3::identity()).abs().max();
    gram.max((r.determinant() - 1.0).abs())
}

/// Closest rotation in the Frobenius sense (polar factor, det forced to +1).
fn nearest_rotation(m: &Matrix3<f64>) -> Matrix3<f64> {
    let svd = m.svd(true, true);
    let u = svd.u.expect("svd u");
    let v_t = svd.v_t.expect("svd v_t");
    let mut d = Matrix3::identity();
    if (u * v_t).determinant() < 0.0 {
        d[(2, 2)] = -1.0;
    }
    u * d * v_t
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{FRAC_PI_2, PI};

    fn close(a: &RigidTransform, b: &RigidTransform, tol: f64) -> bool {
        a.max_abs_diff(b) <= tol
    }

    #[test]
    fn compose_examples() {
        let t = RigidTransform::rot_x(0.3).compose(&RigidTransform::from_translation(1.0, -2.0, 0.5));
        assert!(close(&compose(&RigidTransform::identity(), &t), &t, 0.0));
        assert!(close(&compose(&t, &t.inverse()), &RigidTransform::identity(), 1e-12));
        let rz90 = RigidTransform::rot_z(FRAC_PI_2);
        assert!(close(&(rz90 * rz90), &RigidTransform::rot_z(PI), 1e-12));
    }

    #[test]
    fn inverse_examples() {
        assert_eq!(inverse(&RigidTransform::identity()), RigidTransform::identity());
        let t = RigidTransform::from_translation(1.0, 2.0, 3.0).inverse();
        assert_eq!(*t.translation(), Vector3::new(-1.0, -2.0, -3.0));
        assert!(close(
            &RigidTransform::rot_z(FRAC_PI_2).inverse(),
            &RigidTransform::rot_z(-FRAC_PI_2),
            1e-15
        ));
    }

    #[test]
    fn rejects_reflection_and_garbage() {
        let mut m = Matrix3::identity();
        m[(2, 2)] = -1.0;
        assert!(RigidTransform::new(m, Vector3::zeros()).is_err());
        assert!(RigidTransform::new(Matrix3::from_element(1.0), Vector3::zeros()).is_err());
        let mut h = Matrix4::identity();
        h[(3, 0)] = 1.0;
        assert!(RigidTransform::from_matrix(&h).is_err());
    }

    #[test]
    fn small_drift_is_repaired() {
        let mut m = *RigidTransform::rot_y(0.7).rotation();
        m[(0, 0)] += 1e-7;
        let t = RigidTransform::new(m, Vector3::zeros()).unwrap();
        assert!(orthogonality_drift(t.rotation()) < 1e-12);
    }

    #[test]
    fn rotation_angle_near_identity_and_pi() {
        assert!(RigidTransform::rot_x(1e-9).rotation_angle() - 1e-9 < 1e-18);
        assert!((RigidTransform::rot_y(PI).rotation_angle() - PI).abs() < 1e-12);
        assert!((RigidTransform::rot_z(2.5).rotation_angle() - 2.5).abs() < 1e-12);
    }

    #[test]
    fn serde_row_major() {
        let t = RigidTransform::from_translation(1.0, 2.0, 3.0);
        let json = serde_json::to_string(&t).unwrap();
        assert_eq!(json, "[1.0,0.0,0.0,1.0,0.0,1.0,0.0,2.0,0.0,0.0,1.0,3.0,0.0,0.0,0.0,1.0]");
        let back: RigidTransform = serde_json::from_str(&json).unwrap();
        assert_eq!(back, t);
    }
}
