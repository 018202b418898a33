//! Small vector and quaternion helpers shared by the codec, plant and
//! controller.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

pub type Vec3 = [f64; 3];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Side {
    Left,
    Right,
}

impl Side {
    pub const ALL: [Side; 2] = [Side::Left, Side::Right];

    pub fn index(self) -> usize {
        match self {
            Side::Left => 0,
            Side::Right => 1,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Side::Left => "LEFT",
            Side::Right => "RIGHT",
        }
    }
}

pub fn sub(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub fn add(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

pub fn norm(a: Vec3) -> f64 {
    (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt()
}

pub fn dist(a: Vec3, b: Vec3) -> f64 {
    norm(sub(a, b))
}

/// Wraps an angle into `(-pi, pi]`.
pub fn wrap_angle(a: f64) -> f64 {
    let mut r = a.rem_euclid(2.0 * PI);
    if r > PI {
        r -= 2.0 * PI;
    }
    r
}

/// Quaternion in (w, x, y, z) order. Not necessarily unit length.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quat {
    pub w: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Quat {
    pub const IDENTITY: Quat = Quat {
        w: 1.0,
        x: 0.0,
        y: 0.0,
        z: 0.0,
    };

    pub fn new(w: f64, x: f64, y: f64, z: f64) -> Self {
        Quat { w, x, y, z }
    }

    pub fn from_fixed(words: [i32; 4]) -> Self {
        let s = crate::itp::QUAT_SCALE;
        Quat::new(
            f64::from(words[0]) * s,
            f64::from(words[1]) * s,
            f64::from(words[2]) * s,
            f64::from(words[3]) * s,
        )
    }

    /// Rounds to 1e-9 fixed point, saturating at the i32 range.
    pub fn to_fixed(&self) -> [i32; 4] {
        let f = |v: f64| {
            let r = (v / crate::itp::QUAT_SCALE).round();
            r.clamp(i32::MIN as f64, i32::MAX as f64) as i32
        };
        [f(self.w), f(self.x), f(self.y), f(self.z)]
    }

    /// Rotation by `yaw` radians about +z.
    pub fn from_yaw(yaw: f64) -> Self {
        let h = 0.5 * yaw;
        Quat::new(h.cos(), 0.0, 0.0, h.sin())
    }

    pub fn components(&self) -> [f64; 4] {
        [self.w, self.x, self.y, self.z]
    }

    pub fn from_components(c: [f64; 4]) -> Self {
        Quat::new(c[0], c[1], c[2], c[3])
    }

    pub fn norm(&self) -> f64 {
        (self.w * self.w + self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }

    pub fn conj(&self) -> Self {
        Quat::new(self.w, -self.x, -self.y, -self.z)
    }

    /// Hamilton product `self * rhs`.
    pub fn mul(&self, r: &Quat) -> Self {
        let (a, b) = (self, r);
        Quat::new(
            a.w * b.w - a.x * b.x - a.y * b.y - a.z * b.z,
            a.w * b.x + a.x * b.w + a.y * b.z - a.z * b.y,
            a.w * b.y - a.x * b.z + a.y * b.w + a.z * b.x,
            a.w * b.z + a.x * b.y - a.y * b.x + a.z * b.w,
        )
    }

    /// Rotation about z (ZYX yaw). Meaningful for near-unit quaternions.
    pub fn yaw(&self) -> f64 {
        (2.0 * (self.w * self.z + self.x * self.y))
            .atan2(1.0 - 2.0 * (self.y * self.y + self.z * self.z))
    }

    pub fn is_finite(&self) -> bool {
        self.components().iter().all(|c| c.is_finite())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn yaw_roundtrip() {
        for k in -30..=30 {
            let a = f64::from(k) * 0.1;
            assert!((Quat::from_yaw(a).yaw() - wrap_angle(a)).abs() < 1e-12);
        }
    }

    #[test]
    fn conj_product_is_identity() {
        let q = Quat::from_yaw(0.7);
        let p = q.conj().mul(&q);
        assert!((p.w - 1.0).abs() < 1e-15 && p.z.abs() < 1e-15);
    }

    #[test]
    fn wrap_range() {
        assert!((wrap_angle(3.0 * PI) - PI).abs() < 1e-12);
        assert!((wrap_angle(-PI) - PI).abs() < 1e-12);
        assert_eq!(wrap_angle(0.5), 0.5);
    }
}
