use super::anchors::Anchor;
use super::boxes::{decode, iou, BBox};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Detection {
    pub bbox: BBox,
    /// 1..=C
    pub class_id: usize,
    pub score: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NmsConfig {
    pub score_threshold: f64,
    pub iou_threshold: f64,
    pub max_detections: usize,
}

impl Default for NmsConfig {
    fn default() -> Self {
        NmsConfig { score_threshold: 0.01, iou_threshold: 0.45, max_detections: 100 }
    }
}

/// Greedy per-class suppression. Candidates are visited by descending score
/// (stable for ties); a candidate survives unless a kept box of the same
/// class overlaps it by more than `iou_threshold`.
pub fn greedy_nms(mut candidates: Vec<Detection>, iou_threshold: f64) -> Vec<Detection> {
    candidates.sort_by(|a, b| b.score.total_cmp(&a.score));
    let mut kept: Vec<Detection> = Vec::new();
    for c in candidates {
        if !kept.iter().any(|k| k.class_id == c.class_id && iou(&k.bbox, &c.bbox) > iou_threshold) {
            kept.push(c);
        }
    }
    kept
}

/// Turns per-anchor class probabilities `[M, C+1]` and offsets `[M, 4]` into
/// final detections clipped to `image = (w, h)`, sorted by score.
pub fn decode_and_nms(
    probs: &[f64],
    deltas: &[f64],
    anchors: &[Anchor],
    classes: usize,
    image: (f64, f64),
    cfg: &NmsConfig,
) -> Vec<Detection> {
    let width = classes + 1;
    debug_assert_eq!(probs.len(), anchors.len() * width);
    debug_assert_eq!(deltas.len(), anchors.len() * 4);
    let mut candidates = Vec::new();
    for (a, anchor) in anchors.iter().enumerate() {
        let p = &probs[a * width..(a + 1) * width];
        if p[1..].iter().all(|&s| s < cfg.score_threshold) {
            continue;
        }
        let d = &deltas[a * 4..a * 4 + 4];
        let bbox = decode(&anchor.to_box(), &[d[0], d[1], d[2], d[3]]).clip(image.0, image.1);
        if !bbox.is_valid() {
            continue;
        }
        for (c, &score) in p.iter().enumerate().skip(1) {
            if score >= cfg.score_threshold && score > 0.0 {
                candidates.push(Detection { bbox, class_id: c, score });
            }
        }
    }
    let mut kept = greedy_nms(candidates, cfg.iou_threshold);
    kept.truncate(cfg.max_detections);
    kept
}
