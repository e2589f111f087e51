//! Points, rigid transforms and spherical coordinates.
//!
//! Rotation convention: a [`RigidTransform`] stores roll, pitch and yaw in
//! radians and builds its rotation as `R = Rz(yaw) * Ry(pitch) * Rx(roll)`,
//! i.e. intrinsic z-y-x: yaw is applied about the body z axis first, then
//! pitch about the new y axis, then roll about the new x axis. A point is
//! mapped as `p' = R * p + t`.
//!
//! Azimuth is measured counter-clockwise from +x in the horizontal plane and
//! normalized to `[0, 2π)`. Elevation is positive above the horizontal plane.
//! At the poles (no horizontal component) azimuth is defined as 0.

use std::f64::consts::{FRAC_PI_2, TAU};
use std::ops::{Add, AddAssign, Div, Mul, Neg, Sub};

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Cartesian point or vector in meters.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Point3 {
    pub const ORIGIN: Point3 = Point3 { x: 0.0, y: 0.0, z: 0.0 };

    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn dot(&self, other: &Point3) -> f64 {
        self.x * other.x + self.y * other.y + self.z * other.z
    }

    pub fn norm_squared(&self) -> f64 {
        self.dot(self)
    }

    pub fn norm(&self) -> f64 {
        self.norm_squared().sqrt()
    }

    pub fn distance(&self, other: &Point3) -> f64 {
        (*self - *other).norm()
    }

    pub fn to_vector(self) -> Vector3<f64> {
        Vector3::new(self.x, self.y, self.z)
    }

    pub fn from_vector(v: &Vector3<f64>) -> Self {
        Self::new(v.x, v.y, v.z)
    }
}

impl Add for Point3 {
    type Output = Point3;
    fn add(self, rhs: Point3) -> Point3 {
        Point3::new(self.x + rhs.x, self.y + rhs.y, self.z + rhs.z)
    }
}

impl AddAssign for Point3 {
    fn add_assign(&mut self, rhs: Point3) {
        self.x += rhs.x;
        self.y += rhs.y;
        self.z += rhs.z;
    }
}

impl Sub for Point3 {
    type Output = Point3;
    fn sub(self, rhs: Point3) -> Point3 {
        Point3::new(self.x - rhs.x, self.y - rhs.y, self.z - rhs.z)
    }
}

impl Neg for Point3 {
    type Output = Point3;
    fn neg(self) -> Point3 {
        Point3::new(-self.x, -self.y, -self.z)
    }
}

impl Mul<f64> for Point3 {
    type Output = Point3;
    fn mul(self, s: f64) -> Point3 {
        Point3::new(self.x * s, self.y * s, self.z * s)
    }
}

impl Div<f64> for Point3 {
    type Output = Point3;
    fn div(self, s: f64) -> Point3 {
        Point3::new(self.x / s, self.y / s, self.z / s)
    }
}

/// Rigid-body pose: rotation from roll/pitch/yaw (radians) plus a translation.
///
/// See the module docs for the composition order.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RigidTransform {
    pub translation: Point3,
    pub roll: f64,
    pub pitch: f64,
    pub yaw: f64,
}

impl RigidTransform {
    pub const IDENTITY: RigidTransform = RigidTransform {
        translation: Point3::ORIGIN,
        roll: 0.0,
        pitch: 0.0,
        yaw: 0.0,
    };

    pub fn new(translation: Point3, roll: f64, pitch: f64, yaw: f64) -> Self {
        Self { translation, roll, pitch, yaw }
    }

    pub fn from_translation(translation: Point3) -> Self {
        Self { translation, ..Self::IDENTITY }
    }

    /// Pose from `[x, y, z, roll, pitch, yaw]`.
    pub fn from_array(v: [f64; 6]) -> Self {
        Self::new(Point3::new(v[0], v[1], v[2]), v[3], v[4], v[5])
    }

    pub fn validate(&self) -> Result<()> {
        if self.translation.is_finite()
            && self.roll.is_finite()
            && self.pitch.is_finite()
            && self.yaw.is_finite()
        {
            Ok(())
        } else {
            Err(Error::InvalidTransform(format!("{self:?}")))
        }
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        let (sr, cr) = self.roll.sin_cos();
        let (sp, cp) = self.pitch.sin_cos();
        let (sy, cy) = self.yaw.sin_cos();
        Matrix3::new(
            cy * cp,
            cy * sp * sr - sy * cr,
            cy * sp * cr + sy * sr,
            sy * cp,
            sy * sp * sr + cy * cr,
            sy * sp * cr - cy * sr,
            -sp,
            cp * sr,
            cp * cr,
        )
    }

    /// Rebuild a transform from a rotation matrix and translation.
    ///
    /// The matrix is assumed orthonormal. In gimbal lock (|pitch| = π/2)
    /// roll is pinned to zero and the remaining rotation goes to yaw.
    pub fn from_matrix(rotation: &Matrix3<f64>, translation: Point3) -> Self {
        let sp = (-rotation[(2, 0)]).clamp(-1.0, 1.0);
        let pitch = sp.asin();
        let (roll, yaw) = if (1.0 - sp.abs()) > 1e-12 {
            (
                rotation[(2, 1)].atan2(rotation[(2, 2)]),
                rotation[(1, 0)].atan2(rotation[(0, 0)]),
            )
        } else {
            (0.0, (-rotation[(0, 1)]).atan2(rotation[(1, 1)]))
        };
        Self { translation, roll, pitch, yaw }
    }

    pub fn apply(&self, p: Point3) -> Point3 {
        Self::apply_with(&self.rotation_matrix(), self.translation, p)
    }

    /// Map many points, building the rotation matrix once.
    pub fn apply_all(&self, points: &[Point3]) -> Vec<Point3> {
        let r = self.rotation_matrix();
        points
            .iter()
            .map(|&p| Self::apply_with(&r, self.translation, p))
            .collect()
    }

    fn apply_with(r: &Matrix3<f64>, t: Point3, p: Point3) -> Point3 {
        Point3::from_vector(&(r * p.to_vector())) + t
    }

    /// Rotate a direction without translating it.
    pub fn rotate(&self, v: Point3) -> Point3 {
        Point3::from_vector(&(self.rotation_matrix() * v.to_vector()))
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation_matrix().transpose();
        let t = -Point3::from_vector(&(rt * self.translation.to_vector()));
        Self::from_matrix(&rt, t)
    }

    /// `self ∘ other`: apply `other` first, then `self`.
    pub fn compose(&self, other: &RigidTransform) -> Self {
        let ra = self.rotation_matrix();
        let r = ra * other.rotation_matrix();
        let t = Point3::from_vector(&(ra * other.translation.to_vector())) + self.translation;
        Self::from_matrix(&r, t)
    }
}

/// Range, azimuth and elevation of a point about some origin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SphericalCoord {
    pub range: f64,
    pub azimuth: f64,
    pub elevation: f64,
}

impl SphericalCoord {
    pub fn to_cartesian(&self, origin: Point3) -> Point3 {
        let (se, ce) = self.elevation.sin_cos();
        let (sa, ca) = self.azimuth.sin_cos();
        origin + Point3::new(ce * ca, ce * sa, se) * self.range
    }
}

/// Fold any angle into `[0, 2π)`.
pub fn normalize_azimuth(angle: f64) -> f64 {
    let a = angle.rem_euclid(TAU);
    // rem_euclid can round up to exactly TAU for tiny negative inputs
    if a >= TAU {
        0.0
    } else {
        a
    }
}

pub fn cart_to_spherical(p: Point3, origin: Point3) -> Result<SphericalCoord> {
    let d = p - origin;
    let horizontal = d.x.hypot(d.y);
    let range = d.norm();
    if range == 0.0 {
        return Err(Error::DegeneratePoint);
    }
    let azimuth = if horizontal == 0.0 {
        0.0
    } else {
        normalize_azimuth(d.y.atan2(d.x))
    };
    let elevation = d.z.atan2(horizontal).clamp(-FRAC_PI_2, FRAC_PI_2);
    Ok(SphericalCoord { range, azimuth, elevation })
}

/// Elevation angle of `p` seen from `origin`, or `None` when they coincide.
pub fn elevation_from(p: Point3, origin: Point3) -> Option<f64> {
    let d = p - origin;
    let horizontal = d.x.hypot(d.y);
    if horizontal == 0.0 && d.z == 0.0 {
        None
    } else {
        Some(d.z.atan2(horizontal))
    }
}

/// Unit direction for an azimuth/elevation pair.
pub fn direction(azimuth: f64, elevation: f64) -> Point3 {
    let (se, ce) = elevation.sin_cos();
    let (sa, ca) = azimuth.sin_cos();
    Point3::new(ce * ca, ce * sa, se)
}
