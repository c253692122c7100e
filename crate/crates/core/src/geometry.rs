//! Rigid-body transform algebra and pose-error metrics.
//!
//! Frames follow the `A_from_B` reading: a transform stored for "camera in
//! base" maps camera coordinates into base coordinates. Composition
//! `compose(a, b)` applies `b` first, then `a`.
//!
//! Euler angles use the fixed-axis X-Y-Z convention,
//! `R = Rz(yaw) * Ry(pitch) * Rx(roll)`, with angles in degrees.

use nalgebra::{Matrix3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Tolerance used when validating externally supplied rotation matrices.
pub const ROTATION_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("matrix is not orthonormal (||M^T M - I||_F = {0:e})")]
    NotOrthonormal(f64),
    #[error("matrix is not a proper rotation (det = {0})")]
    Improper(f64),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("zero-norm quaternion")]
    ZeroQuaternion,
}

/// A proper 3x3 rotation matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RotationMatrix(Matrix3<f64>);

impl RotationMatrix {
    pub fn identity() -> Self {
        Self(Matrix3::identity())
    }

    /// Validates orthonormality and determinant before wrapping.
    pub fn new(m: Matrix3<f64>) -> Result<Self, GeometryError> {
        if m.iter().any(|v| !v.is_finite()) {
            return Err(GeometryError::NonFinite("rotation"));
        }
        let ortho = (m.transpose() * m - Matrix3::identity()).norm();
        if ortho >= ROTATION_TOLERANCE {
            return Err(GeometryError::NotOrthonormal(ortho));
        }
        let det = m.determinant();
        if (det - 1.0).abs() > ROTATION_TOLERANCE {
            return Err(GeometryError::Improper(det));
        }
        Ok(Self(m))
    }

    /// Wraps a matrix known to be a rotation (products of rotations,
    /// exponential maps, SVD projections).
    pub fn from_matrix_unchecked(m: Matrix3<f64>) -> Self {
        Self(m)
    }

    /// Projects an approximately orthonormal matrix onto SO(3).
    pub fn orthonormalized(m: &Matrix3<f64>) -> Self {
        let svd = m.svd(true, true);
        let (u, v_t) = (svd.u.unwrap(), svd.v_t.unwrap());
        let mut d = Matrix3::identity();
        if (u * v_t).determinant() < 0.0 {
            d[(2, 2)] = -1.0;
        }
        Self(u * d * v_t)
    }

    pub fn from_axis_angle(axis: &Vector3<f64>, angle_rad: f64) -> Self {
        let n = axis.norm();
        if n == 0.0 || angle_rad == 0.0 {
            return Self::identity();
        }
        Self::exp(&(axis * (angle_rad / n)))
    }

    /// Rodrigues exponential map of a rotation vector (radians).
    pub fn exp(omega: &Vector3<f64>) -> Self {
        let theta = omega.norm();
        if theta < 1e-12 {
            let k = skew(omega);
            return Self(Matrix3::identity() + k + 0.5 * k * k);
        }
        let k = skew(&(omega / theta));
        Self(Matrix3::identity() + k * theta.sin() + k * k * (1.0 - theta.cos()))
    }

    pub fn rot_x(deg: f64) -> Self {
        let (s, c) = deg.to_radians().sin_cos();
        Self(Matrix3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c))
    }

    pub fn rot_y(deg: f64) -> Self {
        let (s, c) = deg.to_radians().sin_cos();
        Self(Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c))
    }

    pub fn rot_z(deg: f64) -> Self {
        let (s, c) = deg.to_radians().sin_cos();
        Self(Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0))
    }

    /// Unit quaternion in (x, y, z, w) order, as used by map/site poses.
    pub fn from_quaternion(x: f64, y: f64, z: f64, w: f64) -> Result<Self, GeometryError> {
        let norm = (x * x + y * y + z * z + w * w).sqrt();
        if !norm.is_finite() {
            return Err(GeometryError::NonFinite("quaternion"));
        }
        if norm < 1e-12 {
            return Err(GeometryError::ZeroQuaternion);
        }
        let q = UnitQuaternion::from_quaternion(nalgebra::Quaternion::new(w, x, y, z));
        Ok(Self(*q.to_rotation_matrix().matrix()))
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    pub fn transpose(&self) -> Self {
        Self(self.0.transpose())
    }

    pub fn mul(&self, other: &RotationMatrix) -> Self {
        Self(self.0 * other.0)
    }

    /// Rotation angle in radians, in [0, pi].
    pub fn angle(&self) -> f64 {
        let c = ((self.0.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
        c.acos()
    }

    /// Logarithm map (rotation vector, radians).
    pub fn log(&self) -> Vector3<f64> {
        UnitQuaternion::from_matrix(&self.0).scaled_axis()
    }
}

impl Default for RotationMatrix {
    fn default() -> Self {
        Self::identity()
    }
}

pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Rotation plus translation, applied as `p -> R p + t`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RigidTransform {
    pub rotation: RotationMatrix,
    pub translation: Vector3<f64>,
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self::default()
    }

    pub fn new(rotation: RotationMatrix, translation: Vector3<f64>) -> Self {
        Self { rotation, translation }
    }

    pub fn from_translation(x: f64, y: f64, z: f64) -> Self {
        Self::new(RotationMatrix::identity(), Vector3::new(x, y, z))
    }

    pub fn from_rotation(rotation: RotationMatrix) -> Self {
        Self::new(rotation, Vector3::zeros())
    }

    /// Builds a transform from a twist-like 6-vector `(omega, t)` using the
    /// rotation exponential and a plain translation. Used for small
    /// optimizer increments.
    pub fn from_increment(omega: &Vector3<f64>, t: &Vector3<f64>) -> Self {
        Self::new(RotationMatrix::exp(omega), *t)
    }

    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.0 * p + self.translation
    }

    pub fn apply_vector(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.0 * v
    }

    pub fn compose(&self, other: &RigidTransform) -> RigidTransform {
        compose(self, other)
    }

    pub fn inverse(&self) -> RigidTransform {
        invert(self)
    }

    /// Largest absolute entry difference between the 3x4 matrices.
    pub fn max_abs_diff(&self, other: &RigidTransform) -> f64 {
        let r = (self.rotation.0 - other.rotation.0).amax();
        let t = (self.translation - other.translation).amax();
        r.max(t)
    }

    pub fn to_pose6d(&self) -> Pose6D {
        transform_to_pose6d(self).pose
    }

    pub fn from_pose6d(p: &Pose6D) -> Self {
        pose6d_to_transform(p)
    }
}

/// `result.apply(p) == a.apply(b.apply(p))`.
pub fn compose(a: &RigidTransform, b: &RigidTransform) -> RigidTransform {
    RigidTransform {
        rotation: RotationMatrix(a.rotation.0 * b.rotation.0),
        translation: a.rotation.0 * b.translation + a.translation,
    }
}

pub fn invert(t: &RigidTransform) -> RigidTransform {
    let rt = t.rotation.0.transpose();
    RigidTransform {
        rotation: RotationMatrix(rt),
        translation: -(rt * t.translation),
    }
}

/// Position in meters, orientation as roll/pitch/yaw in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Pose6D {
    pub tx: f64,
    pub ty: f64,
    pub tz: f64,
    pub roll: f64,
    pub pitch: f64,
    pub yaw: f64,
}

impl Pose6D {
    pub fn new(tx: f64, ty: f64, tz: f64, roll: f64, pitch: f64, yaw: f64) -> Self {
        Self { tx, ty, tz, roll, pitch, yaw }
    }

    pub fn as_array(&self) -> [f64; 6] {
        [self.tx, self.ty, self.tz, self.roll, self.pitch, self.yaw]
    }

    pub fn from_array(a: [f64; 6]) -> Self {
        Self::new(a[0], a[1], a[2], a[3], a[4], a[5])
    }

    pub fn translation_norm(&self) -> f64 {
        (self.tx * self.tx + self.ty * self.ty + self.tz * self.tz).sqrt()
    }
}

/// Euler decomposition plus whether the gimbal-lock representative was used.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EulerDecomposition {
    pub pose: Pose6D,
    pub gimbal_locked: bool,
}

pub fn pose6d_to_transform(p: &Pose6D) -> RigidTransform {
    let r = RotationMatrix::rot_z(p.yaw)
        .mul(&RotationMatrix::rot_y(p.pitch))
        .mul(&RotationMatrix::rot_x(p.roll));
    RigidTransform::new(r, Vector3::new(p.tx, p.ty, p.tz))
}

/// Maps an angle in degrees into (-180, 180].
pub fn wrap_degrees(a: f64) -> f64 {
    let mut w = a % 360.0;
    if w <= -180.0 {
        w += 360.0;
    } else if w > 180.0 {
        w -= 360.0;
    }
    w
}

pub fn transform_to_pose6d(t: &RigidTransform) -> EulerDecomposition {
    let m = t.rotation.matrix();
    let cos_pitch = (m[(0, 0)] * m[(0, 0)] + m[(1, 0)] * m[(1, 0)]).sqrt();
    let pitch = (-m[(2, 0)]).atan2(cos_pitch);
    // |sin(pitch)| within ~1e-12 of one: yaw and roll are coupled.
    let gimbal_locked = cos_pitch < 1e-12;
    let (roll, yaw) = if gimbal_locked {
        (0.0, (-m[(0, 1)]).atan2(m[(1, 1)]))
    } else {
        (m[(2, 1)].atan2(m[(2, 2)]), m[(1, 0)].atan2(m[(0, 0)]))
    };
    EulerDecomposition {
        pose: Pose6D {
            tx: t.translation.x,
            ty: t.translation.y,
            tz: t.translation.z,
            roll: wrap_degrees(roll.to_degrees()),
            pitch: pitch.to_degrees(),
            yaw: wrap_degrees(yaw.to_degrees()),
        },
        gimbal_locked,
    }
}

/// Relative arm-base pose between the teaching stage and iteration k.
///
/// `delta_cam` maps teaching-camera coordinates to current-camera
/// coordinates; `extrinsic_teach` and `extrinsic_now` map camera
/// coordinates to base coordinates at teaching time and now. Returns the
/// transform mapping teaching-base coordinates of a world-fixed point to
/// its current-base coordinates:
///
/// ```text
/// dR_B = R_now * dR_C * R_teach^-1
/// dt_B = -R_now * dR_C * R_teach^-1 * t_teach + R_now * dt_C + t_now
/// ```
pub fn relative_base_pose(
    delta_cam: &RigidTransform,
    extrinsic_teach: &RigidTransform,
    extrinsic_now: &RigidTransform,
) -> RigidTransform {
    let r_now = extrinsic_now.rotation.matrix();
    let r_teach_inv = extrinsic_teach.rotation.matrix().transpose();
    let chain = r_now * delta_cam.rotation.matrix() * r_teach_inv;
    let translation =
        -(chain * extrinsic_teach.translation) + r_now * delta_cam.translation + extrinsic_now.translation;
    RigidTransform::new(RotationMatrix::from_matrix_unchecked(chain), translation)
}

/// Chordal rotation error `||I - R_gt R_est^-1||_F`.
pub fn rotation_error(gt: &RotationMatrix, est: &RotationMatrix) -> f64 {
    (Matrix3::identity() - gt.matrix() * est.matrix().transpose()).norm()
}

pub fn translation_error(gt: &Vector3<f64>, est: &Vector3<f64>) -> f64 {
    (gt - est).norm()
}

/// Rotation and translation error of an estimate against ground truth.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PoseError {
    pub e_rot: f64,
    pub e_trans: f64,
}

impl PoseError {
    pub fn between(gt: &RigidTransform, est: &RigidTransform) -> Self {
        Self {
            e_rot: rotation_error(&gt.rotation, &est.rotation),
            e_trans: translation_error(&gt.translation, &est.translation),
        }
    }
}

/// Serialized form of a transform: row-major rotation and translation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransformRepr {
    pub rotation: [[f64; 3]; 3],
    pub translation: [f64; 3],
}

impl From<RigidTransform> for TransformRepr {
    fn from(t: RigidTransform) -> Self {
        let m = t.rotation.matrix();
        let mut rotation = [[0.0; 3]; 3];
        for (r, row) in rotation.iter_mut().enumerate() {
            for (c, v) in row.iter_mut().enumerate() {
                *v = m[(r, c)];
            }
        }
        Self { rotation, translation: [t.translation.x, t.translation.y, t.translation.z] }
    }
}

impl TryFrom<TransformRepr> for RigidTransform {
    type Error = GeometryError;

    fn try_from(r: TransformRepr) -> Result<Self, Self::Error> {
        let m = Matrix3::from_fn(|i, j| r.rotation[i][j]);
        let rotation = RotationMatrix::new(m)?;
        let t = Vector3::from(r.translation);
        if t.iter().any(|v| !v.is_finite()) {
            return Err(GeometryError::NonFinite("translation"));
        }
        Ok(RigidTransform::new(rotation, t))
    }
}

impl Serialize for RigidTransform {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        TransformRepr::from(*self).serialize(s)
    }
}

impl<'de> Deserialize<'de> for RigidTransform {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let repr = TransformRepr::deserialize(d)?;
        RigidTransform::try_from(repr).map_err(serde::de::Error::custom)
    }
}
