//! Rigid transforms and the pinhole camera model.

use nalgebra as na;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Mat3 = na::Matrix3<f64>;
pub type Vec3 = na::Vector3<f64>;

const ORTHO_TOL: f64 = 1e-9;

/// Rotation plus translation, mapping `x` to `R x + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    rotation: Mat3,
    translation: Vec3,
}

impl RigidTransform {
    /// Builds a transform, rejecting rotations that are not in SO(3) to 1e-9.
    pub fn new(rotation: Mat3, translation: Vec3) -> Result<Self> {
        if !rotation.iter().chain(translation.iter()).all(|v| v.is_finite()) {
            return Err(Error::Contract("transform has non-finite entries".into()));
        }
        let gram = rotation * rotation.transpose() - Mat3::identity();
        if gram.iter().any(|v| v.abs() > ORTHO_TOL) {
            return Err(Error::Contract("rotation is not orthonormal".into()));
        }
        if (rotation.determinant() - 1.0).abs() > ORTHO_TOL {
            return Err(Error::Contract("rotation determinant is not +1".into()));
        }
        Ok(Self {
            rotation,
            translation,
        })
    }

    /// Projects an approximately orthonormal matrix onto SO(3) before building.
    pub fn from_approx(rotation: Mat3, translation: Vec3) -> Result<Self> {
        Self::new(nearest_rotation(&rotation)?, translation)
    }

    pub fn identity() -> Self {
        Self {
            rotation: Mat3::identity(),
            translation: Vec3::zeros(),
        }
    }

    /// Rotation about +z by `yaw` radians.
    pub fn rot_z(yaw: f64) -> Self {
        let (s, c) = yaw.sin_cos();
        Self {
            rotation: Mat3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0),
            translation: Vec3::zeros(),
        }
    }

    pub fn from_translation(translation: Vec3) -> Self {
        Self {
            rotation: Mat3::identity(),
            translation,
        }
    }

    pub fn rotation(&self) -> &Mat3 {
        &self.rotation
    }

    pub fn translation(&self) -> &Vec3 {
        &self.translation
    }

    pub fn apply(&self, p: &Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }

    /// `self ∘ other`: apply `other` first.
    pub fn compose(&self, other: &RigidTransform) -> RigidTransform {
        RigidTransform {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> RigidTransform {
        let rt = self.rotation.transpose();
        RigidTransform {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    pub fn rotation_row_major(&self) -> [f64; 9] {
        let r = &self.rotation;
        [
            r[(0, 0)],
            r[(0, 1)],
            r[(0, 2)],
            r[(1, 0)],
            r[(1, 1)],
            r[(1, 2)],
            r[(2, 0)],
            r[(2, 1)],
            r[(2, 2)],
        ]
    }

    /// Angle of the relative rotation `self⁻¹ · other`, radians.
    pub fn rotation_angle_to(&self, other: &RigidTransform) -> f64 {
        let rel = self.rotation.transpose() * other.rotation;
        // atan2 form: acos of the trace loses half the digits near zero
        let s = Vec3::new(rel[(2, 1)] - rel[(1, 2)], rel[(0, 2)] - rel[(2, 0)], rel[(1, 0)] - rel[(0, 1)]).norm();
        s.atan2(rel.trace() - 1.0)
    }
}

/// Serialized form of a transform: row-major rotation and translation.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct TransformDoc {
    pub rotation: [f64; 9],
    pub translation: [f64; 3],
}

impl From<&RigidTransform> for TransformDoc {
    fn from(t: &RigidTransform) -> Self {
        TransformDoc {
            rotation: t.rotation_row_major(),
            translation: [t.translation.x, t.translation.y, t.translation.z],
        }
    }
}

impl TransformDoc {
    pub fn to_transform(&self) -> Result<RigidTransform> {
        RigidTransform::from_approx(
            Mat3::from_row_slice(&self.rotation),
            Vec3::from_column_slice(&self.translation),
        )
    }
}

/// Closest rotation in Frobenius norm (polar factor with det = +1).
pub fn nearest_rotation(m: &Mat3) -> Result<Mat3> {
    let svd = m.svd(true, true);
    let (u, vt) = match (svd.u, svd.v_t) {
        (Some(u), Some(vt)) => (u, vt),
        _ => return Err(Error::Numeric("SVD failed while orthonormalizing".into())),
    };
    let mut d = Mat3::identity();
    if (u * vt).determinant() < 0.0 {
        d[(2, 2)] = -1.0;
    }
    Ok(u * d * vt)
}

/// Pinhole intrinsics `K`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Intrinsics {
    k: Mat3,
}

impl Intrinsics {
    pub fn new(k: Mat3) -> Result<Self> {
        if !k.iter().all(|v| v.is_finite()) {
            return Err(Error::Contract("intrinsics have non-finite entries".into()));
        }
        if k[(0, 0)] <= 0.0 || k[(1, 1)] <= 0.0 {
            return Err(Error::Contract("focal lengths must be positive".into()));
        }
        if k[(2, 2)] != 1.0 || k[(2, 0)] != 0.0 || k[(2, 1)] != 0.0 || k[(1, 0)] != 0.0 {
            return Err(Error::Contract("K must be upper triangular with K[2][2] = 1".into()));
        }
        Ok(Self { k })
    }

    pub fn from_params(fx: f64, fy: f64, cx: f64, cy: f64) -> Result<Self> {
        Self::new(Mat3::new(fx, 0.0, cx, 0.0, fy, cy, 0.0, 0.0, 1.0))
    }

    pub fn matrix(&self) -> &Mat3 {
        &self.k
    }

    pub fn fx(&self) -> f64 {
        self.k[(0, 0)]
    }
    pub fn fy(&self) -> f64 {
        self.k[(1, 1)]
    }
    pub fn cx(&self) -> f64 {
        self.k[(0, 2)]
    }
    pub fn cy(&self) -> f64 {
        self.k[(1, 2)]
    }
    pub fn skew(&self) -> f64 {
        self.k[(0, 1)]
    }

    /// Projects a camera-frame point; `None` when depth λ ≤ 0.
    pub fn project_camera(&self, pc: &Vec3) -> Option<(f64, f64)> {
        if pc.z <= 0.0 {
            return None;
        }
        let x = pc.x / pc.z;
        let y = pc.y / pc.z;
        Some((
            self.fx() * x + self.skew() * y + self.cx(),
            self.fy() * y + self.cy(),
        ))
    }

    /// Back-projects pixel `(u, v)` to a unit-depth camera ray.
    pub fn ray(&self, u: f64, v: f64) -> Vec3 {
        let y = (v - self.cy()) / self.fy();
        let x = (u - self.cx() - self.skew() * y) / self.fx();
        Vec3::new(x, y, 1.0)
    }

    /// Scales the intrinsics for an image resampled by `(sy, sx)`.
    pub fn scaled(&self, sx: f64, sy: f64) -> Result<Self> {
        // pixel centers sit at integer coordinates
        let fx = self.fx() * sx;
        let fy = self.fy() * sy;
        let cx = (self.cx() + 0.5) * sx - 0.5;
        let cy = (self.cy() + 0.5) * sy - 0.5;
        Self::new(Mat3::new(fx, self.skew() * sx, cx, 0.0, fy, cy, 0.0, 0.0, 1.0))
    }
}

/// Pixel of a world point: `λ [u v 1]ᵀ = K (R p + t)`; `None` behind the camera.
pub fn project_point(k: &Intrinsics, t: &RigidTransform, p: &Vec3) -> Option<(f64, f64)> {
    k.project_camera(&t.apply(p))
}
