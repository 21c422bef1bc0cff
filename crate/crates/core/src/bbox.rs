//! Axis-aligned bounding boxes shared across labeling, detection and
//! evaluation. Two flavors: integer pixel boxes with inclusive corners
//! (annotations) and continuous boxes (detector output, IoU math).

use serde::{Deserialize, Serialize};

/// Integer pixel box, corners inclusive: covers pixels `x1..=x2`, `y1..=y2`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PixelBox {
    pub x1: i32,
    pub y1: i32,
    pub x2: i32,
    pub y2: i32,
}

impl PixelBox {
    pub fn new(x1: i32, y1: i32, x2: i32, y2: i32) -> Self {
        Self { x1, y1, x2, y2 }
    }

    pub fn width(&self) -> i32 {
        self.x2 - self.x1 + 1
    }

    pub fn height(&self) -> i32 {
        self.y2 - self.y1 + 1
    }

    /// Pixel count, inclusive convention.
    pub fn area(&self) -> i64 {
        if self.x2 < self.x1 || self.y2 < self.y1 {
            return 0;
        }
        self.width() as i64 * self.height() as i64
    }

    pub fn contains_box(&self, other: &PixelBox) -> bool {
        self.x1 <= other.x1 && self.y1 <= other.y1 && self.x2 >= other.x2 && self.y2 >= other.y2
    }

    pub fn union(&self, other: &PixelBox) -> PixelBox {
        PixelBox {
            x1: self.x1.min(other.x1),
            y1: self.y1.min(other.y1),
            x2: self.x2.max(other.x2),
            y2: self.y2.max(other.y2),
        }
    }

    /// Clamp into `[0, w-1] x [0, h-1]`; `None` if nothing remains.
    pub fn clamp_to(&self, width: u32, height: u32) -> Option<PixelBox> {
        let b = PixelBox {
            x1: self.x1.max(0),
            y1: self.y1.max(0),
            x2: self.x2.min(width as i32 - 1),
            y2: self.y2.min(height as i32 - 1),
        };
        if b.x1 > b.x2 || b.y1 > b.y2 {
            None
        } else {
            Some(b)
        }
    }

    pub fn to_boxf(&self) -> BoxF {
        // Inclusive pixel box [x1..=x2] spans the continuous range [x1, x2+1).
        BoxF {
            x1: self.x1 as f64,
            y1: self.y1 as f64,
            x2: (self.x2 + 1) as f64,
            y2: (self.y2 + 1) as f64,
        }
    }
}

/// Continuous box `[x1, x2] x [y1, y2]` in pixel units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoxF {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl BoxF {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Self {
        Self { x1, y1, x2, y2 }
    }

    pub fn width(&self) -> f64 {
        self.x2 - self.x1
    }

    pub fn height(&self) -> f64 {
        self.y2 - self.y1
    }

    pub fn area(&self) -> f64 {
        (self.width().max(0.0)) * (self.height().max(0.0))
    }

    pub fn center(&self) -> (f64, f64) {
        ((self.x1 + self.x2) * 0.5, (self.y1 + self.y2) * 0.5)
    }

    pub fn intersection_area(&self, other: &BoxF) -> f64 {
        let w = (self.x2.min(other.x2) - self.x1.max(other.x1)).max(0.0);
        let h = (self.y2.min(other.y2) - self.y1.max(other.y1)).max(0.0);
        w * h
    }

    /// Intersection over union with continuous areas; 0 when the union is
    /// empty.
    pub fn iou(&self, other: &BoxF) -> f64 {
        let inter = self.intersection_area(other);
        let union = self.area() + other.area() - inter;
        if union <= 0.0 {
            0.0
        } else {
            inter / union
        }
    }
}
