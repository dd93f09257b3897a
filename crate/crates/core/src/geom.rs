//! Planar geometry primitives.

use std::f64::consts::PI;
use std::ops::{Add, AddAssign, Div, Mul, Neg, Sub, SubAssign};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
#[error("angle must be finite, got {0}")]
pub struct NonFiniteAngle(pub f64);

/// Planar vector in meters (or m/s in velocity space).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct Vec2 {
    pub x: f64,
    pub y: f64,
}

impl Vec2 {
    pub const ZERO: Vec2 = Vec2 { x: 0.0, y: 0.0 };

    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    /// Unit vector at angle `theta` from the +x axis.
    pub fn from_angle(theta: f64) -> Self {
        let (s, c) = theta.sin_cos();
        Self { x: c, y: s }
    }

    pub fn polar(r: f64, theta: f64) -> Self {
        Self::from_angle(theta) * r
    }

    pub fn dot(self, o: Vec2) -> f64 {
        self.x * o.x + self.y * o.y
    }

    /// z-component of the 3D cross product.
    pub fn cross(self, o: Vec2) -> f64 {
        self.x * o.y - self.y * o.x
    }

    pub fn norm_sq(self) -> f64 {
        self.dot(self)
    }

    pub fn norm(self) -> f64 {
        self.norm_sq().sqrt()
    }

    pub fn distance(self, o: Vec2) -> f64 {
        (self - o).norm()
    }

    pub fn angle(self) -> f64 {
        self.y.atan2(self.x)
    }

    /// Unit vector in the same direction, or `None` for (near) zero vectors.
    pub fn normalized(self) -> Option<Vec2> {
        let n = self.norm();
        (n > 1e-12).then(|| self / n)
    }

    /// Rotates counter-clockwise by `theta`.
    pub fn rotate(self, theta: f64) -> Vec2 {
        let (s, c) = theta.sin_cos();
        Vec2::new(c * self.x - s * self.y, s * self.x + c * self.y)
    }

    /// Counter-clockwise perpendicular.
    pub fn perp(self) -> Vec2 {
        Vec2::new(-self.y, self.x)
    }

    /// Rescales to at most `max` length.
    pub fn clamp_norm(self, max: f64) -> Vec2 {
        let n = self.norm();
        if n > max && n > 0.0 {
            self * (max / n)
        } else {
            self
        }
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

impl From<[f64; 2]> for Vec2 {
    fn from(a: [f64; 2]) -> Self {
        Vec2::new(a[0], a[1])
    }
}

impl From<Vec2> for [f64; 2] {
    fn from(v: Vec2) -> Self {
        [v.x, v.y]
    }
}

impl Add for Vec2 {
    type Output = Vec2;
    fn add(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x + o.x, self.y + o.y)
    }
}

impl AddAssign for Vec2 {
    fn add_assign(&mut self, o: Vec2) {
        self.x += o.x;
        self.y += o.y;
    }
}

impl Sub for Vec2 {
    type Output = Vec2;
    fn sub(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x - o.x, self.y - o.y)
    }
}

impl SubAssign for Vec2 {
    fn sub_assign(&mut self, o: Vec2) {
        self.x -= o.x;
        self.y -= o.y;
    }
}

impl Mul<f64> for Vec2 {
    type Output = Vec2;
    fn mul(self, k: f64) -> Vec2 {
        Vec2::new(self.x * k, self.y * k)
    }
}

impl Div<f64> for Vec2 {
    type Output = Vec2;
    fn div(self, k: f64) -> Vec2 {
        Vec2::new(self.x / k, self.y / k)
    }
}

impl Neg for Vec2 {
    type Output = Vec2;
    fn neg(self) -> Vec2 {
        Vec2::new(-self.x, -self.y)
    }
}

/// Wraps an angle into (−π, π].
pub fn normalize_angle(theta: f64) -> Result<f64, NonFiniteAngle> {
    if !theta.is_finite() {
        return Err(NonFiniteAngle(theta));
    }
    Ok(wrap_angle(theta))
}

/// Infallible variant of [`normalize_angle`] for values known to be finite.
pub fn wrap_angle(theta: f64) -> f64 {
    let two_pi = 2.0 * PI;
    let mut a = theta.rem_euclid(two_pi);
    if a > PI {
        a -= two_pi;
    }
    // rem_euclid maps −π to π already; guard against rounding landing on −π.
    if a <= -PI {
        a += two_pi;
    }
    a
}

/// Planar pose: position plus heading (radians, CCW from +x).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Pose {
    pub position: Vec2,
    pub heading: f64,
}

impl Pose {
    pub fn new(position: Vec2, heading: f64) -> Self {
        Self { position, heading }
    }

    /// Maps a point from the body frame to the world frame.
    pub fn to_world(&self, local: Vec2) -> Vec2 {
        self.position + local.rotate(self.heading)
    }

    /// Maps a world point into the body frame.
    pub fn to_local(&self, world: Vec2) -> Vec2 {
        (world - self.position).rotate(-self.heading)
    }

    /// Bearing of a world point relative to the heading, in (−π, π].
    pub fn bearing_to(&self, world: Vec2) -> f64 {
        wrap_angle((world - self.position).angle() - self.heading)
    }

    /// World point at relative `bearing` and `range`.
    pub fn project(&self, bearing: f64, range: f64) -> Vec2 {
        self.position + Vec2::polar(range, self.heading + bearing)
    }
}

/// Distance from `p` to the segment `a`–`b`.
pub fn point_segment_distance(p: Vec2, a: Vec2, b: Vec2) -> f64 {
    let ab = b - a;
    let len_sq = ab.norm_sq();
    if len_sq == 0.0 {
        return p.distance(a);
    }
    let t = ((p - a).dot(ab) / len_sq).clamp(0.0, 1.0);
    p.distance(a + ab * t)
}

/// Distance along a ray (`origin`, unit `dir`) to the first intersection
/// with a disc, if any. A ray starting inside the disc hits at 0.
pub fn ray_disc_intersection(origin: Vec2, dir: Vec2, center: Vec2, radius: f64) -> Option<f64> {
    let oc = origin - center;
    let c = oc.norm_sq() - radius * radius;
    if c <= 0.0 {
        return Some(0.0);
    }
    let b = oc.dot(dir);
    if b >= 0.0 {
        return None;
    }
    let disc = b * b - c;
    if disc < 0.0 {
        return None;
    }
    Some(-b - disc.sqrt())
}

/// Oriented rectangle given by center, half extents and the angle of its
/// local +x axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrientedRect {
    pub center: Vec2,
    pub half_x: f64,
    pub half_y: f64,
    pub angle: f64,
}

impl OrientedRect {
    fn to_local(&self, p: Vec2) -> Vec2 {
        (p - self.center).rotate(-self.angle)
    }

    /// Distance from `p` to the rectangle (0 inside).
    pub fn distance_to(&self, p: Vec2) -> f64 {
        let l = self.to_local(p);
        let dx = (l.x.abs() - self.half_x).max(0.0);
        let dy = (l.y.abs() - self.half_y).max(0.0);
        dx.hypot(dy)
    }

    pub fn overlaps_disc(&self, center: Vec2, radius: f64) -> bool {
        self.distance_to(center) < radius
    }

    fn corners(&self) -> [Vec2; 4] {
        let ax = Vec2::from_angle(self.angle) * self.half_x;
        let ay = Vec2::from_angle(self.angle).perp() * self.half_y;
        [
            self.center + ax + ay,
            self.center - ax + ay,
            self.center - ax - ay,
            self.center + ax - ay,
        ]
    }

    /// Separating-axis overlap test between two oriented rectangles.
    /// Touching rectangles do not overlap.
    pub fn overlaps(&self, other: &OrientedRect) -> bool {
        let axes = [
            Vec2::from_angle(self.angle),
            Vec2::from_angle(self.angle).perp(),
            Vec2::from_angle(other.angle),
            Vec2::from_angle(other.angle).perp(),
        ];
        let ca = self.corners();
        let cb = other.corners();
        axes.iter().all(|axis| {
            let (amin, amax) = project_extent(&ca, *axis);
            let (bmin, bmax) = project_extent(&cb, *axis);
            amax > bmin && bmax > amin
        })
    }
}

fn project_extent(pts: &[Vec2; 4], axis: Vec2) -> (f64, f64) {
    pts.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| {
        let d = p.dot(axis);
        (lo.min(d), hi.max(d))
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalize_examples() {
        assert_eq!(normalize_angle(0.0).unwrap(), 0.0);
        assert!((normalize_angle(3.0 * PI).unwrap() - PI).abs() < 1e-12);
        assert_eq!(normalize_angle(-PI).unwrap(), PI);
        assert!(normalize_angle(f64::NAN).is_err());
        assert!(normalize_angle(f64::INFINITY).is_err());
    }

    #[test]
    fn pose_round_trip() {
        let pose = Pose::new(Vec2::new(1.0, -2.0), 0.7);
        let w = Vec2::new(3.5, 4.0);
        let back = pose.to_world(pose.to_local(w));
        assert!(back.distance(w) < 1e-12);
        let b = pose.bearing_to(w);
        let r = pose.position.distance(w);
        assert!(pose.project(b, r).distance(w) < 1e-12);
    }

    #[test]
    fn ray_hits_disc_front_surface() {
        let hit = ray_disc_intersection(Vec2::ZERO, Vec2::new(1.0, 0.0), Vec2::new(1.0, 0.0), 0.3);
        assert!((hit.unwrap() - 0.7).abs() < 1e-12);
        assert!(ray_disc_intersection(Vec2::ZERO, Vec2::new(-1.0, 0.0), Vec2::new(1.0, 0.0), 0.3).is_none());
    }

    #[test]
    fn rect_overlap() {
        let a = OrientedRect {
            center: Vec2::ZERO,
            half_x: 0.5,
            half_y: 0.2,
            angle: 0.0,
        };
        let b = OrientedRect {
            center: Vec2::new(0.9, 0.0),
            half_x: 0.5,
            half_y: 0.2,
            angle: 0.0,
        };
        let c = OrientedRect {
            center: Vec2::new(1.1, 0.0),
            ..b
        };
        assert!(a.overlaps(&b));
        assert!(!a.overlaps(&c));
        assert!(a.overlaps_disc(Vec2::new(0.0, 0.5), 0.31));
        assert!(!a.overlaps_disc(Vec2::new(0.0, 0.5), 0.29));
    }

    proptest::proptest! {
        #[test]
        fn normalize_is_idempotent_and_in_range(theta in -1e4f64..1e4) {
            let a = normalize_angle(theta).unwrap();
            proptest::prop_assert!(a > -PI && a <= PI);
            proptest::prop_assert_eq!(normalize_angle(a).unwrap(), a);
            let diff = (theta - a) / (2.0 * PI);
            proptest::prop_assert!((diff - diff.round()).abs() < 1e-9);
        }
    }
}
