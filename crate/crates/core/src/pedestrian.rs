//! Pedestrian agent state.

use serde::{Deserialize, Serialize};

use crate::geom::{wrap_angle, OrientedRect, Vec2};

/// Default shoulder span (side to side), meters.
pub const DEFAULT_SHOULDER_LENGTH: f64 = 0.45;
/// Default body depth (front to back), meters.
pub const DEFAULT_SHOULDER_WIDTH: f64 = 0.25;

/// Position, velocity, preferred velocity and shoulder dimensions of one
/// pedestrian, plus the direction the body faces.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PedestrianState {
    pub id: u32,
    pub position: Vec2,
    pub velocity: Vec2,
    pub v_pref: Vec2,
    /// Shoulder span, side to side.
    pub shoulder_length: f64,
    /// Body depth, front to back.
    pub shoulder_width: f64,
    /// Radians, kept in (−π, π].
    pub facing: f64,
}

impl PedestrianState {
    pub fn new(id: u32, position: Vec2) -> Self {
        Self {
            id,
            position,
            velocity: Vec2::ZERO,
            v_pref: Vec2::ZERO,
            shoulder_length: DEFAULT_SHOULDER_LENGTH,
            shoulder_width: DEFAULT_SHOULDER_WIDTH,
            facing: 0.0,
        }
    }

    pub fn with_velocity(mut self, v: Vec2) -> Self {
        self.velocity = v;
        self
    }

    pub fn with_v_pref(mut self, v: Vec2) -> Self {
        self.v_pref = v;
        self
    }

    pub fn with_facing(mut self, facing: f64) -> Self {
        self.facing = wrap_angle(facing);
        self
    }

    pub fn with_shoulders(mut self, length: f64, width: f64) -> Self {
        self.shoulder_length = length;
        self.shoulder_width = width;
        self
    }

    /// Radius of the disc circumscribing the shoulder rectangle.
    pub fn radius(&self) -> f64 {
        self.shoulder_length.hypot(self.shoulder_width) / 2.0
    }

    pub fn facing_dir(&self) -> Vec2 {
        Vec2::from_angle(self.facing)
    }

    /// Shoulder rectangle: depth along the facing direction, span across it.
    pub fn footprint(&self) -> OrientedRect {
        OrientedRect {
            center: self.position,
            half_x: self.shoulder_width / 2.0,
            half_y: self.shoulder_length / 2.0,
            angle: self.facing,
        }
    }

    /// Whether two circumscribing discs overlap.
    pub fn discs_overlap(&self, other: &PedestrianState) -> bool {
        self.position.distance(other.position) < self.radius() + other.radius()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn radius_circumscribes_rectangle() {
        let p = PedestrianState::new(0, Vec2::ZERO).with_shoulders(0.6, 0.8);
        assert!((p.radius() - 0.5).abs() < 1e-12);
        let fp = p.footprint();
        // a corner of the rectangle lies on the disc
        let corner = Vec2::new(fp.half_x, fp.half_y);
        assert!((corner.norm() - p.radius()).abs() < 1e-12);
    }

    #[test]
    fn facing_is_normalized() {
        let p = PedestrianState::new(0, Vec2::ZERO).with_facing(3.0 * std::f64::consts::PI);
        assert!((p.facing - std::f64::consts::PI).abs() < 1e-12);
    }
}
