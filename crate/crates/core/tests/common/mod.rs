//! Brute-force references and fixtures shared by the integration tests.
#![allow(dead_code)]

use rand::Rng;
use vssa::detection::{Anchor, BBox, Detection};

pub fn random_box<R: Rng>(rng: &mut R, side: f64) -> BBox {
    let w = rng.gen_range(2.0..side * 0.6);
    let h = rng.gen_range(2.0..side * 0.6);
    let x = rng.gen_range(0.0..side - w);
    let y = rng.gen_range(0.0..side - h);
    BBox::new(x, y, x + w, y + h).unwrap()
}

/// Coarse grid of boxes so that exact IoU ties and duplicates show up.
pub fn grid_box<R: Rng>(rng: &mut R) -> BBox {
    let x = rng.gen_range(0..8) as f64 * 8.0;
    let y = rng.gen_range(0..8) as f64 * 8.0;
    let w = rng.gen_range(1..5) as f64 * 8.0;
    let h = rng.gen_range(1..5) as f64 * 8.0;
    BBox::new(x, y, (x + w).min(64.0), (y + h).min(64.0)).unwrap()
}

pub fn anchor_from_box(b: &BBox) -> Anchor {
    let (cx, cy) = b.center();
    Anchor { cx, cy, width: b.width(), height: b.height(), level: 0, cell: (0, 0), ratio: 0 }
}

/// IoU written out by corners, independent of the library version.
pub fn ref_iou(a: &BBox, b: &BBox) -> f64 {
    let xs = [a.xmin.max(b.xmin), a.xmax.min(b.xmax)];
    let ys = [a.ymin.max(b.ymin), a.ymax.min(b.ymax)];
    if xs[1] <= xs[0] || ys[1] <= ys[0] {
        return 0.0;
    }
    let inter = (xs[1] - xs[0]) * (ys[1] - ys[0]);
    let ua = (a.xmax - a.xmin) * (a.ymax - a.ymin);
    let ub = (b.xmax - b.xmin) * (b.ymax - b.ymin);
    inter / (ua + ub - inter)
}

/// Reference matcher: returns the assigned ground truth of every anchor.
///
/// Threshold pass, then each ground truth in order forces its best anchor
/// among those no earlier ground truth forced.
pub fn ref_match(anchors: &[BBox], gts: &[BBox], threshold: f64) -> Vec<Option<usize>> {
    let mut out = vec![None; anchors.len()];
    for (a, p) in anchors.iter().enumerate() {
        let ious: Vec<f64> = gts.iter().map(|g| ref_iou(p, g)).collect();
        if let Some(max) = ious.iter().cloned().reduce(f64::max) {
            if max >= threshold {
                out[a] = ious.iter().position(|&v| v == max);
            }
        }
    }
    let mut forced: Vec<usize> = Vec::new();
    for (g, gt) in gts.iter().enumerate() {
        let free: Vec<usize> = (0..anchors.len()).filter(|a| !forced.contains(a)).collect();
        let Some(max) = free.iter().map(|&a| ref_iou(&anchors[a], gt)).reduce(f64::max) else { continue };
        let a = *free.iter().find(|&&a| ref_iou(&anchors[a], gt) == max).unwrap();
        forced.push(a);
        out[a] = Some(g);
    }
    out
}

/// Reference suppression: repeatedly take the highest-scoring survivor and
/// discard everything of its class that overlaps it too much.
pub fn ref_nms(dets: &[Detection], threshold: f64) -> Vec<Detection> {
    let mut pool: Vec<(usize, Detection)> = dets.iter().cloned().enumerate().collect();
    let mut kept = Vec::new();
    while !pool.is_empty() {
        let mut best = 0;
        for i in 1..pool.len() {
            let (a, b) = (&pool[i], &pool[best]);
            if a.1.score > b.1.score || (a.1.score == b.1.score && a.0 < b.0) {
                best = i;
            }
        }
        let (_, top) = pool.remove(best);
        pool.retain(|(_, d)| d.class_id != top.class_id || ref_iou(&d.bbox, &top.bbox) <= threshold);
        kept.push(top);
    }
    kept
}

/// 11-point AP from ranked hit flags, recomputing every prefix from scratch.
pub fn ref_ap11(hits: &[bool], total_gt: usize) -> f64 {
    let mut sum = 0.0;
    for i in 0..=10 {
        let t = i as f64 / 10.0;
        let mut best: f64 = 0.0;
        for k in 1..=hits.len() {
            let tp = hits[..k].iter().filter(|&&h| h).count() as f64;
            let recall = tp / total_gt as f64;
            if recall >= t {
                best = best.max(tp / k as f64);
            }
        }
        sum += best;
    }
    sum / 11.0
}
