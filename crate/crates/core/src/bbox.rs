//! Normalized axis-aligned boxes and their text serialization, shared by
//! data generation and evaluation.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Decimal places used when a box is written into text.
pub const BBOX_DECIMALS: usize = 3;

/// Worst-case per-coordinate error of a format/parse round trip.
pub const BBOX_QUANTUM: f64 = 5e-4;

/// `(x1, y1, x2, y2)` in `[0, 1]` image-normalized coordinates with
/// `x1 < x2` and `y1 < y2`. Serialized as a four-element array.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 4]", into = "[f64; 4]")]
pub struct BBox {
    x1: f64,
    y1: f64,
    x2: f64,
    y2: f64,
}

impl BBox {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self> {
        let c = [x1, y1, x2, y2];
        if c.iter().any(|v| !v.is_finite() || !(0.0..=1.0).contains(v)) {
            return Err(Error::Validation(format!("bbox {c:?} is not normalized to [0, 1]")));
        }
        if !(x1 < x2 && y1 < y2) {
            return Err(Error::Validation(format!("bbox {c:?} has non-positive extent")));
        }
        Ok(BBox { x1, y1, x2, y2 })
    }

    pub fn coords(&self) -> [f64; 4] {
        [self.x1, self.y1, self.x2, self.y2]
    }

    pub fn area(&self) -> f64 {
        (self.x2 - self.x1) * (self.y2 - self.y1)
    }

    pub fn iou(&self, other: &BBox) -> f64 {
        iou(self.coords(), other.coords())
    }

    /// The box after rounding to [`BBOX_DECIMALS`], or `None` if the
    /// rounded box collapses.
    pub fn quantized(&self) -> Option<BBox> {
        let q = |v: f64| (v * 1000.0).round() / 1000.0;
        BBox::new(q(self.x1), q(self.y1), q(self.x2), q(self.y2)).ok()
    }
}

impl TryFrom<[f64; 4]> for BBox {
    type Error = Error;

    fn try_from(c: [f64; 4]) -> Result<Self> {
        BBox::new(c[0], c[1], c[2], c[3])
    }
}

impl From<BBox> for [f64; 4] {
    fn from(b: BBox) -> Self {
        b.coords()
    }
}

/// `[0.100, 0.200, 0.500, 0.800]`
impl fmt::Display for BBox {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "[{:.3}, {:.3}, {:.3}, {:.3}]",
            self.x1, self.y1, self.x2, self.y2
        )
    }
}

pub fn format_bbox(b: &BBox) -> String {
    b.to_string()
}

/// Intersection over union of two `(x1, y1, x2, y2)` boxes in any common
/// coordinate frame. Empty unions give 0.
pub fn iou(a: [f64; 4], b: [f64; 4]) -> f64 {
    let iw = (a[2].min(b[2]) - a[0].max(b[0])).max(0.0);
    let ih = (a[3].min(b[3]) - a[1].max(b[1])).max(0.0);
    let inter = iw * ih;
    let area = |c: [f64; 4]| (c[2] - c[0]).max(0.0) * (c[3] - c[1]).max(0.0);
    let union = area(a) + area(b) - inter;
    if union > 0.0 {
        (inter / union).clamp(0.0, 1.0)
    } else {
        0.0
    }
}
