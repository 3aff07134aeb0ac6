use log::warn;

use super::anchors::Anchor;
use super::boxes::{encode, iou, BBox};
use crate::{Error, Result};

/// IoU at or above which an anchor is positive.
pub const POSITIVE_IOU: f64 = 0.5;

/// Per-anchor training targets.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchResult {
    /// 0 = background, otherwise the class id.
    pub labels: Vec<usize>,
    /// Offsets to the matched box; zero for background anchors.
    pub targets: Vec<[f64; 4]>,
    /// Index of the ground truth each anchor is assigned to.
    pub assigned: Vec<Option<usize>>,
}

impl MatchResult {
    pub fn positives(&self) -> usize {
        self.labels.iter().filter(|&&l| l > 0).count()
    }
}

/// Assigns anchors to ground truth.
///
/// An anchor is positive when its best IoU is at least `threshold` (ties go to
/// the lower ground-truth index). Each ground truth then claims its own best
/// anchor (ties to the lowest anchor index); a later ground truth whose best
/// anchor was already claimed takes its best unclaimed anchor instead, so every
/// box keeps at least one positive. Boxes reaching outside `image = (w, h)` are
/// clipped first.
pub fn match_anchors(
    anchors: &[Anchor],
    gt_boxes: &[BBox],
    gt_labels: &[usize],
    threshold: f64,
    image: (f64, f64),
) -> Result<MatchResult> {
    if gt_boxes.len() != gt_labels.len() {
        return Err(Error::Data(format!("{} boxes but {} labels", gt_boxes.len(), gt_labels.len())));
    }
    if let Some(l) = gt_labels.iter().find(|&&l| l == 0) {
        return Err(Error::Data(format!("ground-truth label {l} is reserved for background")));
    }
    let mut boxes = Vec::with_capacity(gt_boxes.len());
    for b in gt_boxes {
        let c = b.clip(image.0, image.1);
        if c != *b {
            warn!("ground-truth box {b} lies partly outside the {}x{} image; clipped to {c}", image.0, image.1);
        }
        if !c.is_valid() {
            return Err(Error::Data(format!("ground-truth box {b} is empty after clipping")));
        }
        boxes.push(c);
    }

    let priors: Vec<BBox> = anchors.iter().map(Anchor::to_box).collect();
    let m = anchors.len();
    let overlaps: Vec<Vec<f64>> = priors.iter().map(|p| boxes.iter().map(|g| iou(p, g)).collect()).collect();

    let mut assigned: Vec<Option<usize>> = vec![None; m];
    for (a, row) in overlaps.iter().enumerate() {
        let mut best: Option<(usize, f64)> = None;
        for (g, &v) in row.iter().enumerate() {
            if best.map_or(true, |(_, b)| v > b) {
                best = Some((g, v));
            }
        }
        if let Some((g, v)) = best {
            if v >= threshold {
                assigned[a] = Some(g);
            }
        }
    }
    let mut claimed = vec![false; m];
    for g in 0..boxes.len() {
        let mut best: Option<(usize, f64)> = None;
        for a in 0..m {
            if !claimed[a] && best.map_or(true, |(_, b)| overlaps[a][g] > b) {
                best = Some((a, overlaps[a][g]));
            }
        }
        if let Some((a, _)) = best {
            claimed[a] = true;
            assigned[a] = Some(g);
        }
    }

    let mut labels = vec![0; m];
    let mut targets = vec![[0.0; 4]; m];
    for a in 0..m {
        if let Some(g) = assigned[a] {
            labels[a] = gt_labels[g];
            targets[a] = encode(&priors[a], &boxes[g]);
        }
    }
    Ok(MatchResult { labels, targets, assigned })
}
