//! Image-plane bounding boxes.

use serde::{Deserialize, Serialize};

/// Axis-aligned box in normalized image coordinates of one camera.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub cx: f64,
    pub cy: f64,
    pub width: f64,
    pub height: f64,
    pub camera_id: u8,
}

impl BBox {
    pub fn new(cx: f64, cy: f64, width: f64, height: f64, camera_id: u8) -> Self {
        Self {
            cx,
            cy,
            width: width.max(0.0),
            height: height.max(0.0),
            camera_id,
        }
    }

    pub fn area(&self) -> f64 {
        self.width * self.height
    }

    pub fn left(&self) -> f64 {
        self.cx - self.width / 2.0
    }

    pub fn right(&self) -> f64 {
        self.cx + self.width / 2.0
    }

    pub fn top(&self) -> f64 {
        self.cy - self.height / 2.0
    }

    pub fn bottom(&self) -> f64 {
        self.cy + self.height / 2.0
    }

    /// The part of the box inside the image frame [0,1]².
    pub fn clipped(&self) -> BBox {
        let l = self.left().clamp(0.0, 1.0);
        let r = self.right().clamp(0.0, 1.0);
        let t = self.top().clamp(0.0, 1.0);
        let b = self.bottom().clamp(0.0, 1.0);
        BBox::new((l + r) / 2.0, (t + b) / 2.0, r - l, b - t, self.camera_id)
    }

    /// Linear blend `self + alpha * (other - self)` of center and extents.
    pub fn blend(&self, other: &BBox, alpha: f64) -> BBox {
        let lerp = |a: f64, b: f64| a + alpha * (b - a);
        BBox::new(
            lerp(self.cx, other.cx),
            lerp(self.cy, other.cy),
            lerp(self.width, other.width),
            lerp(self.height, other.height),
            other.camera_id,
        )
    }
}
