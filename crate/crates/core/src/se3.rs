//! Rigid-body math on SO(3) and SE(3).
//!
//! Poses are camera-to-world transforms: a point `x_c` in the camera frame maps
//! to `R x_c + t` in the world frame, so `t` is the camera center in meters.
//! Rotations are kept as 3x3 matrices; quaternions only appear in file I/O.

use std::f64::consts::PI;
use std::ops::Mul;

use nalgebra::{Matrix3, Vector3};

use crate::error::{invalid, Error, Result};

/// Below this angle the Rodrigues coefficients switch to their Taylor series.
pub const SMALL_ANGLE: f64 = 1e-8;

/// Orthonormality tolerance used when validating matrices handed to `log_so3`.
pub const ORTHONORMAL_TOL: f64 = 1e-6;

/// Above `PI - NEAR_PI` the log map reads the axis from the symmetric part.
const NEAR_PI: f64 = 1e-2;

/// A 3D rotation stored as an orthonormal matrix with determinant +1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rotation(Matrix3<f64>);

impl Rotation {
    pub fn identity() -> Self {
        Rotation(Matrix3::identity())
    }

    /// Wraps `m` after checking orthonormality and orientation within `tol`.
    pub fn from_matrix(m: Matrix3<f64>, tol: f64) -> Result<Self> {
        check_rotation_matrix(&m, tol)?;
        Ok(Rotation(m))
    }

    /// Wraps `m` without validation. Callers guarantee `m` is a rotation.
    pub fn from_matrix_unchecked(m: Matrix3<f64>) -> Self {
        Rotation(m)
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    pub fn inverse(&self) -> Self {
        Rotation(self.0.transpose())
    }

    pub fn rot_x(angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        Rotation(Matrix3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c))
    }

    pub fn rot_y(angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        Rotation(Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c))
    }

    pub fn rot_z(angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        Rotation(Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0))
    }

    /// Rotation angle in `[0, pi]`.
    pub fn angle(&self) -> f64 {
        geodesic_angle(&Rotation::identity(), self)
    }

    pub fn apply(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.0 * v
    }
}

impl Mul for Rotation {
    type Output = Rotation;

    fn mul(self, rhs: Rotation) -> Rotation {
        Rotation(self.0 * rhs.0)
    }
}

fn check_rotation_matrix(m: &Matrix3<f64>, tol: f64) -> Result<()> {
    if m.iter().any(|v| !v.is_finite()) {
        return Err(invalid("rotation matrix has non-finite entries"));
    }
    let defect = (m.transpose() * m - Matrix3::identity()).abs().max();
    if defect > tol {
        return Err(invalid(format!(
            "matrix is not orthonormal (max |M^T M - I| = {defect:e})"
        )));
    }
    let det = m.determinant();
    if (det - 1.0).abs() > tol {
        return Err(invalid(format!("rotation determinant is {det}, expected +1")));
    }
    Ok(())
}

/// Camera intrinsics in pixels. Carried through I/O, never used in rewards.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl Intrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64) -> Result<Self> {
        if !(fx > 0.0 && fy > 0.0) || !cx.is_finite() || !cy.is_finite() {
            return Err(invalid("intrinsics require fx > 0, fy > 0 and a finite principal point"));
        }
        Ok(Intrinsics { fx, fy, cx, cy })
    }
}

/// A rigid transform. `translation` is in meters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub rotation: Rotation,
    pub translation: Vector3<f64>,
}

impl Pose {
    pub fn new(rotation: Rotation, translation: Vector3<f64>) -> Result<Self> {
        if translation.iter().any(|v| !v.is_finite()) {
            return Err(invalid("pose translation must be finite"));
        }
        Ok(Pose { rotation, translation })
    }

    pub fn identity() -> Self {
        Pose { rotation: Rotation::identity(), translation: Vector3::zeros() }
    }

    pub fn from_translation(t: Vector3<f64>) -> Self {
        Pose { rotation: Rotation::identity(), translation: t }
    }

    /// `self ∘ other`: apply `other` first, then `self`.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose {
            rotation: self.rotation * other.rotation,
            translation: self.rotation.apply(&other.translation) + self.translation,
        }
    }

    pub fn inverse(&self) -> Pose {
        let r_inv = self.rotation.inverse();
        Pose { rotation: r_inv, translation: -r_inv.apply(&self.translation) }
    }
}

/// A time-ordered camera path with at least two poses.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    poses: Vec<Pose>,
    intrinsics: Option<Vec<Intrinsics>>,
    frame_rate: f64,
}

impl Trajectory {
    pub const DEFAULT_FRAME_RATE: f64 = 16.0;

    pub fn new(poses: Vec<Pose>, frame_rate: f64) -> Result<Self> {
        if poses.len() < 2 {
            return Err(Error::Validation(format!(
                "trajectory needs at least 2 poses, got {}",
                poses.len()
            )));
        }
        if !(frame_rate > 0.0 && frame_rate.is_finite()) {
            return Err(Error::Validation(format!("frame rate must be positive, got {frame_rate}")));
        }
        if let Some(i) = poses.iter().position(|p| p.translation.iter().any(|v| !v.is_finite())) {
            return Err(Error::Validation(format!("pose {} has a non-finite translation", i + 1)));
        }
        Ok(Trajectory { poses, intrinsics: None, frame_rate })
    }

    pub fn with_intrinsics(mut self, intrinsics: Vec<Intrinsics>) -> Result<Self> {
        if intrinsics.len() != self.poses.len() {
            return Err(invalid(format!(
                "{} intrinsics for {} poses",
                intrinsics.len(),
                self.poses.len()
            )));
        }
        self.intrinsics = Some(intrinsics);
        Ok(self)
    }

    pub fn poses(&self) -> &[Pose] {
        &self.poses
    }

    pub fn intrinsics(&self) -> Option<&[Intrinsics]> {
        self.intrinsics.as_deref()
    }

    pub fn frame_rate(&self) -> f64 {
        self.frame_rate
    }

    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }

    /// Same metadata, new poses. The pose count must not change.
    pub(crate) fn with_poses(&self, poses: Vec<Pose>) -> Trajectory {
        debug_assert_eq!(poses.len(), self.poses.len());
        Trajectory { poses, intrinsics: self.intrinsics.clone(), frame_rate: self.frame_rate }
    }

    /// Left-multiplies every pose by `g`.
    pub fn transformed(&self, g: &Pose) -> Trajectory {
        self.with_poses(self.poses.iter().map(|p| g.compose(p)).collect())
    }
}

pub fn hat(w: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -w.z, w.y, w.z, 0.0, -w.x, -w.y, w.x, 0.0)
}

fn vee(m: &Matrix3<f64>) -> Vector3<f64> {
    Vector3::new(m[(2, 1)], m[(0, 2)], m[(1, 0)])
}

/// Rodrigues map from an axis-angle vector (radians) to a rotation.
pub fn exp_so3(omega: &Vector3<f64>) -> Result<Rotation> {
    if omega.iter().any(|v| !v.is_finite()) {
        return Err(invalid("exp_so3 requires a finite axis-angle vector"));
    }
    let theta2 = omega.norm_squared();
    let theta = theta2.sqrt();
    let (a, b) = if theta < SMALL_ANGLE {
        (1.0 - theta2 / 6.0, 0.5 - theta2 / 24.0)
    } else {
        (theta.sin() / theta, (1.0 - theta.cos()) / theta2)
    };
    let k = hat(omega);
    Ok(Rotation(Matrix3::identity() + k * a + k * k * b))
}

/// Principal axis-angle vector of `r`, with norm in `[0, pi]`.
pub fn log_so3(r: &Rotation) -> Result<Vector3<f64>> {
    let m = &r.0;
    check_rotation_matrix(m, ORTHONORMAL_TOL)?;
    let cos_theta = ((m.trace() - 1.0) / 2.0).clamp(-1.0, 1.0);
    let skew = vee(&(m - m.transpose())) / 2.0; // sin(theta) * axis
    let sin_theta = skew.norm();
    let theta = sin_theta.atan2(cos_theta);

    if theta < SMALL_ANGLE {
        // theta / sin(theta) ≈ 1 + theta²/6, with theta² from the trace.
        let theta2 = 2.0 * (1.0 - cos_theta);
        return Ok(skew * (1.0 + theta2 / 6.0));
    }
    if theta < PI - NEAR_PI {
        return Ok(skew * (theta / sin_theta));
    }

    // Near pi: (M + M^T)/2 = cos I + (1 - cos) a a^T.
    let sym = (m + m.transpose()) / 2.0;
    let outer = (sym - Matrix3::identity() * cos_theta) / (1.0 - cos_theta);
    let k = (0..3)
        .max_by(|&i, &j| outer[(i, i)].total_cmp(&outer[(j, j)]))
        .unwrap_or(0);
    let ak = outer[(k, k)].max(0.0).sqrt();
    let mut axis = Vector3::zeros();
    for j in 0..3 {
        axis[j] = if j == k { ak } else { outer[(k, j)] / ak };
    }
    axis.normalize_mut();
    let dot = axis.dot(&skew);
    if dot.abs() > 1e-15 {
        if dot < 0.0 {
            axis = -axis;
        }
    } else {
        // Exactly pi: both signs are valid; make the largest component positive.
        let imax = axis.iamax();
        if axis[imax] < 0.0 {
            axis = -axis;
        }
    }
    Ok(axis * theta)
}

/// Angle of `aᵀb`, in `[0, pi]`.
///
/// Equal to `arccos((Tr(aᵀb) − 1) / 2)`, evaluated as `atan2(sin, cos)` so it
/// stays accurate near zero where the arccos form bottoms out around 1e-8.
pub fn geodesic_angle(a: &Rotation, b: &Rotation) -> f64 {
    let m = a.0.transpose() * b.0;
    let cos_theta = ((m.trace() - 1.0) / 2.0).clamp(-1.0, 1.0);
    let sin_theta = (vee(&(m - m.transpose())) / 2.0).norm();
    sin_theta.atan2(cos_theta)
}

/// The transform taking frame `a` to frame `b`, so that `a ∘ rel = b`.
pub fn relative_pose(a: &Pose, b: &Pose) -> Pose {
    a.inverse().compose(b)
}

/// Re-expresses `t` relative to its first pose, which becomes the identity.
pub fn normalize_gauge(t: &Trajectory) -> Trajectory {
    let anchor = t.poses[0].inverse();
    let mut poses: Vec<Pose> = t.poses.iter().map(|p| anchor.compose(p)).collect();
    poses[0] = Pose::identity();
    t.with_poses(poses)
}
