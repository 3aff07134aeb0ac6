use super::boxes::BBox;
use crate::model::ANCHORS_PER_CELL;
use crate::{Error, Result};

/// Width/height ratios of the anchors at every cell, in output order.
pub const ASPECT_RATIOS: [f64; ANCHORS_PER_CELL] = [1.0, 2.0, 3.0, 0.5, 1.0 / 3.0];
/// Anchor scale of the finest level, as a fraction of the input side.
pub const MIN_SCALE: f64 = 0.2;
/// Anchor scale of the coarsest level.
pub const MAX_SCALE: f64 = 0.95;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Anchor {
    pub cx: f64,
    pub cy: f64,
    pub width: f64,
    pub height: f64,
    /// Pyramid level, 0 = finest.
    pub level: usize,
    /// `(x, y)` cell on that level.
    pub cell: (usize, usize),
    pub ratio: usize,
}

impl Anchor {
    pub fn to_box(&self) -> BBox {
        BBox::from_center(self.cx, self.cy, self.width, self.height)
    }
}

/// Anchors for levels given fine to coarse as `(H, W)`, for a square input of
/// side `input_size`. Order: level, row, column, ratio.
pub fn generate_anchors(levels: &[(usize, usize)], input_size: usize) -> Result<Vec<Anchor>> {
    if levels.is_empty() || levels.iter().any(|&(h, w)| h == 0 || w == 0) {
        return Err(Error::Config(format!("cannot place anchors on pyramid {levels:?}")));
    }
    let side = input_size as f64;
    let mut out = Vec::with_capacity(levels.iter().map(|(h, w)| h * w * ANCHORS_PER_CELL).sum());
    for (k, &(h, w)) in levels.iter().enumerate() {
        let s = if levels.len() == 1 {
            MIN_SCALE
        } else {
            MIN_SCALE + (MAX_SCALE - MIN_SCALE) * k as f64 / (levels.len() - 1) as f64
        };
        for y in 0..h {
            for x in 0..w {
                for (ratio, &r) in ASPECT_RATIOS.iter().enumerate() {
                    out.push(Anchor {
                        cx: (x as f64 + 0.5) / w as f64 * side,
                        cy: (y as f64 + 0.5) / h as f64 * side,
                        width: s * r.sqrt() * side,
                        height: s / r.sqrt() * side,
                        level: k,
                        cell: (x, y),
                        ratio,
                    });
                }
            }
        }
    }
    Ok(out)
}
