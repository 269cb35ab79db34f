//! Vector, quaternion and yaw-angle primitives.
//!
//! Camera frame: x right, y down, z forward (depth). Yaw is measured about the
//! vertical (y) axis with yaw 0 facing +z and yaw +π/2 facing +x.

use std::f64::consts::{PI, TAU};
use std::ops::{Add, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Quaternions whose norm is within this distance of 1 are stored unchanged.
/// Nine significant decimal digits cannot represent a unit quaternion more
/// precisely than this, so renormalizing inside the tolerance would make the
/// text format unstable.
pub const UNIT_NORM_EXACT_TOL: f64 = 1e-8;
/// Quaternions further than this from unit norm are rejected.
pub const UNIT_NORM_REJECT_TOL: f64 = 1e-3;

const DEGENERATE_FORWARD: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Vec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Vec3 {
    pub const ZERO: Vec3 = Vec3::new(0.0, 0.0, 0.0);

    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Vec3 { x, y, z }
    }

    /// Checked constructor for values coming from outside the library.
    pub fn try_new(x: f64, y: f64, z: f64) -> Result<Self> {
        let v = Vec3 { x, y, z };
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::InvalidArgument(format!("non-finite vector {v:?}")))
        }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn dot(&self, other: &Vec3) -> f64 {
        self.x * other.x + self.y * other.y + self.z * other.z
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    /// Length of the horizontal (x–z) projection.
    pub fn horizontal_norm(&self) -> f64 {
        self.x.hypot(self.z)
    }

    pub fn distance(&self, other: &Vec3) -> f64 {
        (*self - *other).norm()
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }
}

impl Add for Vec3 {
    type Output = Vec3;
    fn add(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl Sub for Vec3 {
    type Output = Vec3;
    fn sub(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl Mul<Vec3> for f64 {
    type Output = Vec3;
    fn mul(self, v: Vec3) -> Vec3 {
        Vec3::new(self * v.x, self * v.y, self * v.z)
    }
}

impl Neg for Vec3 {
    type Output = Vec3;
    fn neg(self) -> Vec3 {
        Vec3::new(-self.x, -self.y, -self.z)
    }
}

/// Rotation stored scalar-first as (w, x, y, z).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UnitQuaternion {
    w: f64,
    x: f64,
    y: f64,
    z: f64,
}

impl UnitQuaternion {
    pub const IDENTITY: UnitQuaternion = UnitQuaternion {
        w: 1.0,
        x: 0.0,
        y: 0.0,
        z: 0.0,
    };

    /// Accepts components whose norm is within [`UNIT_NORM_REJECT_TOL`] of
    /// one, renormalizing anything outside [`UNIT_NORM_EXACT_TOL`].
    pub fn new(w: f64, x: f64, y: f64, z: f64) -> Result<Self> {
        if !(w.is_finite() && x.is_finite() && y.is_finite() && z.is_finite()) {
            return Err(Error::InvalidArgument("non-finite quaternion".into()));
        }
        let norm = (w * w + x * x + y * y + z * z).sqrt();
        let off = (norm - 1.0).abs();
        if off > UNIT_NORM_REJECT_TOL + 1e-12 {
            return Err(Error::InvalidArgument(format!(
                "quaternion norm {norm} is not unit"
            )));
        }
        if off <= UNIT_NORM_EXACT_TOL {
            Ok(UnitQuaternion { w, x, y, z })
        } else {
            Ok(UnitQuaternion {
                w: w / norm,
                x: x / norm,
                y: y / norm,
                z: z / norm,
            })
        }
    }

    /// Pure rotation about the vertical axis by `yaw`.
    pub fn from_yaw(yaw: f64) -> Self {
        let half = 0.5 * yaw;
        UnitQuaternion {
            w: half.cos(),
            x: 0.0,
            y: half.sin(),
            z: 0.0,
        }
    }

    pub fn components(&self) -> [f64; 4] {
        [self.w, self.x, self.y, self.z]
    }

    pub fn norm(&self) -> f64 {
        let [w, x, y, z] = self.components();
        (w * w + x * x + y * y + z * z).sqrt()
    }

    /// Sandwich product q v q*.
    pub fn rotate(&self, v: Vec3) -> Vec3 {
        let qv = Vec3::new(self.x, self.y, self.z);
        let t = 2.0 * cross(qv, v);
        v + self.w * t + cross(qv, t)
    }
}

fn cross(a: Vec3, b: Vec3) -> Vec3 {
    Vec3::new(
        a.y * b.z - a.z * b.y,
        a.z * b.x - a.x * b.z,
        a.x * b.y - a.y * b.x,
    )
}

/// Horizontal angle in radians, always inside (−π, π].
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(transparent)]
pub struct YawAngle(f64);

impl YawAngle {
    pub const ZERO: YawAngle = YawAngle(0.0);

    pub fn radians(self) -> f64 {
        self.0
    }
}

impl From<YawAngle> for f64 {
    fn from(a: YawAngle) -> f64 {
        a.0
    }
}

/// Reduces `raw` modulo 2π into (−π, π].
pub fn wrap_angle(raw: f64) -> Result<YawAngle> {
    if !raw.is_finite() {
        return Err(Error::InvalidArgument(format!("non-finite angle {raw}")));
    }
    Ok(YawAngle(wrap_finite(raw)))
}

pub(crate) fn wrap_finite(raw: f64) -> f64 {
    if raw > -PI && raw <= PI {
        return raw;
    }
    let mut r = raw.rem_euclid(TAU);
    if r > PI {
        r -= TAU;
    }
    r
}

/// Yaw of the rotated forward (+z) axis projected onto the x–z plane.
pub fn yaw_from_quaternion(q: &UnitQuaternion) -> Result<YawAngle> {
    let f = q.rotate(Vec3::new(0.0, 0.0, 1.0));
    if f.horizontal_norm() <= DEGENERATE_FORWARD {
        return Err(Error::DegenerateOrientation);
    }
    Ok(YawAngle(wrap_finite(f.x.atan2(f.z))))
}

/// Head pose: yaw of the nose relative to the yaw of the waist.
pub fn relative_head_yaw(nose_q: &UnitQuaternion, waist_q: &UnitQuaternion) -> Result<YawAngle> {
    let nose = yaw_from_quaternion(nose_q)?;
    let waist = yaw_from_quaternion(waist_q)?;
    Ok(YawAngle(wrap_finite(nose.0 - waist.0)))
}

/// Rotates `v` about the vertical axis; positive yaw turns +z toward +x.
pub fn rotate_yaw(v: Vec3, theta: YawAngle) -> Vec3 {
    let (s, c) = theta.0.sin_cos();
    Vec3::new(v.x * c + v.z * s, v.y, -v.x * s + v.z * c)
}
