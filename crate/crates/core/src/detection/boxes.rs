use std::fmt;

use crate::{Error, Result};

/// Axis-aligned box in pixels, `[xmin, xmax) x [ymin, ymax)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BBox {
    pub xmin: f64,
    pub ymin: f64,
    pub xmax: f64,
    pub ymax: f64,
}

impl BBox {
    /// Checked constructor: coordinates finite, `xmax > xmin`, `ymax > ymin`.
    pub fn new(xmin: f64, ymin: f64, xmax: f64, ymax: f64) -> Result<Self> {
        let b = BBox { xmin, ymin, xmax, ymax };
        if !b.is_valid() {
            return Err(Error::Data(format!("invalid box {b}")));
        }
        Ok(b)
    }

    pub fn from_center(cx: f64, cy: f64, w: f64, h: f64) -> Self {
        BBox { xmin: cx - w / 2.0, ymin: cy - h / 2.0, xmax: cx + w / 2.0, ymax: cy + h / 2.0 }
    }

    pub fn is_valid(&self) -> bool {
        [self.xmin, self.ymin, self.xmax, self.ymax].iter().all(|v| v.is_finite())
            && self.xmax > self.xmin
            && self.ymax > self.ymin
    }

    pub fn width(&self) -> f64 {
        self.xmax - self.xmin
    }

    pub fn height(&self) -> f64 {
        self.ymax - self.ymin
    }

    pub fn area(&self) -> f64 {
        self.width().max(0.0) * self.height().max(0.0)
    }

    pub fn center(&self) -> (f64, f64) {
        ((self.xmin + self.xmax) / 2.0, (self.ymin + self.ymax) / 2.0)
    }

    /// Clamped to `[0, width] x [0, height]`.
    pub fn clip(&self, width: f64, height: f64) -> BBox {
        BBox {
            xmin: self.xmin.clamp(0.0, width),
            ymin: self.ymin.clamp(0.0, height),
            xmax: self.xmax.clamp(0.0, width),
            ymax: self.ymax.clamp(0.0, height),
        }
    }

    pub fn scale(&self, sx: f64, sy: f64) -> BBox {
        BBox { xmin: self.xmin * sx, ymin: self.ymin * sy, xmax: self.xmax * sx, ymax: self.ymax * sy }
    }

    pub fn translate(&self, dx: f64, dy: f64) -> BBox {
        BBox { xmin: self.xmin + dx, ymin: self.ymin + dy, xmax: self.xmax + dx, ymax: self.ymax + dy }
    }
}

impl fmt::Display for BBox {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {}, {})", self.xmin, self.ymin, self.xmax, self.ymax)
    }
}

/// Intersection over union; 0 when either box is empty.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let iw = (a.xmax.min(b.xmax) - a.xmin.max(b.xmin)).max(0.0);
    let ih = (a.ymax.min(b.ymax) - a.ymin.max(b.ymin)).max(0.0);
    let inter = iw * ih;
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

/// Offsets of `target` relative to `prior`: `(dcx/w, dcy/h, ln(w'/w), ln(h'/h))`.
pub fn encode(prior: &BBox, target: &BBox) -> [f64; 4] {
    let (pcx, pcy) = prior.center();
    let (tcx, tcy) = target.center();
    let (pw, ph) = (prior.width(), prior.height());
    [(tcx - pcx) / pw, (tcy - pcy) / ph, (target.width() / pw).ln(), (target.height() / ph).ln()]
}

/// Inverse of [`encode`].
pub fn decode(prior: &BBox, d: &[f64; 4]) -> BBox {
    let (pcx, pcy) = prior.center();
    let (pw, ph) = (prior.width(), prior.height());
    BBox::from_center(pcx + d[0] * pw, pcy + d[1] * ph, pw * d[2].exp(), ph * d[3].exp())
}
