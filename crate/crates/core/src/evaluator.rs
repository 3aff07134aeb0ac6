//! VOC-style detection metrics with 11-point interpolated AP.

use std::fmt::Write;

use crate::dataset::Object;
use crate::detection::{iou, Detection};
use crate::{Error, Result};

/// One detection's fate during matching.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchRecord {
    pub image: usize,
    pub class_id: usize,
    pub score: f64,
    /// Best IoU with a ground truth of the same class.
    pub iou: f64,
    pub true_positive: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassReport {
    pub class_id: usize,
    pub ap: f64,
    pub ground_truths: usize,
    pub detections: usize,
    /// `(recall, precision)` after each detection, by descending score.
    pub pr_curve: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub classes: Vec<ClassReport>,
    /// Mean AP over classes with at least one ground truth.
    pub map: f64,
    /// Pooled precision at the score threshold that maximizes F1.
    pub precision: f64,
    pub recall: f64,
    pub f1_threshold: f64,
    pub matches: Vec<MatchRecord>,
}

/// 11-point interpolated AP of a PR curve.
pub fn average_precision_11(curve: &[(f64, f64)]) -> f64 {
    (0..=10)
        .map(|i| {
            let t = i as f64 / 10.0;
            curve.iter().filter(|(r, _)| *r >= t).map(|(_, p)| *p).fold(0.0, f64::max)
        })
        .sum::<f64>()
        / 11.0
}

/// Matches detections to ground truth and computes per-class AP.
///
/// Detections of each class are visited by descending score. A detection is a
/// true positive when its best-overlapping ground truth (same class, same
/// image) has IoU at or above `iou_threshold` and has not been claimed yet;
/// otherwise it is a false positive.
pub fn evaluate(detections: &[Vec<Detection>], ground_truth: &[Vec<Object>], classes: usize, iou_threshold: f64) -> Result<EvalReport> {
    if detections.len() != ground_truth.len() {
        return Err(Error::Data(format!("{} detection lists for {} images", detections.len(), ground_truth.len())));
    }
    let bad = |c: usize| c == 0 || c > classes;
    for (i, (d, g)) in detections.iter().zip(ground_truth).enumerate() {
        if let Some(c) = d.iter().map(|d| d.class_id).chain(g.iter().map(|o| o.class_id)).find(|&c| bad(c)) {
            return Err(Error::Data(format!("image {i}: class id {c} outside 1..={classes}")));
        }
    }

    let mut reports = Vec::with_capacity(classes);
    let mut matches = Vec::new();
    for class_id in 1..=classes {
        let gts: Vec<Vec<_>> = ground_truth.iter().map(|g| g.iter().filter(|o| o.class_id == class_id).map(|o| o.bbox).collect()).collect();
        let total: usize = gts.iter().map(Vec::len).sum();
        let mut claimed: Vec<Vec<bool>> = gts.iter().map(|g| vec![false; g.len()]).collect();
        let mut dets: Vec<(usize, &Detection)> = detections
            .iter()
            .enumerate()
            .flat_map(|(i, ds)| ds.iter().filter(|d| d.class_id == class_id).map(move |d| (i, d)))
            .collect();
        dets.sort_by(|a, b| b.1.score.total_cmp(&a.1.score));

        let (mut tp, mut fp) = (0usize, 0usize);
        let mut curve = Vec::with_capacity(dets.len());
        for (img, d) in &dets {
            let mut best: Option<(usize, f64)> = None;
            for (j, g) in gts[*img].iter().enumerate() {
                let v = iou(&d.bbox, g);
                if best.map_or(true, |(_, b)| v > b) {
                    best = Some((j, v));
                }
            }
            let hit = match best {
                Some((j, v)) if v >= iou_threshold && !claimed[*img][j] => {
                    claimed[*img][j] = true;
                    true
                }
                _ => false,
            };
            if hit {
                tp += 1;
            } else {
                fp += 1;
            }
            let recall = if total > 0 { tp as f64 / total as f64 } else { 0.0 };
            curve.push((recall, tp as f64 / (tp + fp) as f64));
            matches.push(MatchRecord { image: *img, class_id, score: d.score, iou: best.map_or(0.0, |b| b.1), true_positive: hit });
        }
        reports.push(ClassReport {
            class_id,
            ap: if total > 0 { average_precision_11(&curve) } else { 0.0 },
            ground_truths: total,
            detections: dets.len(),
            pr_curve: curve,
        });
    }
    let with_gt: Vec<f64> = reports.iter().filter(|r| r.ground_truths > 0).map(|r| r.ap).collect();
    let map = if with_gt.is_empty() { 0.0 } else { with_gt.iter().sum::<f64>() / with_gt.len() as f64 };

    // pooled operating point
    let total_gt: usize = reports.iter().map(|r| r.ground_truths).sum();
    let mut pooled: Vec<&MatchRecord> = matches.iter().collect();
    pooled.sort_by(|a, b| b.score.total_cmp(&a.score));
    let (mut tp, mut best) = (0usize, (0.0, 0.0, 0.0, f64::INFINITY));
    for (k, m) in pooled.iter().enumerate() {
        tp += m.true_positive as usize;
        if pooled.get(k + 1).is_some_and(|n| n.score == m.score) {
            continue;
        }
        let p = tp as f64 / (k + 1) as f64;
        let r = if total_gt > 0 { tp as f64 / total_gt as f64 } else { 0.0 };
        let f1 = if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 };
        if f1 > best.0 {
            best = (f1, p, r, m.score);
        }
    }
    Ok(EvalReport { classes: reports, map, precision: best.1, recall: best.2, f1_threshold: best.3, matches })
}

impl EvalReport {
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        writeln!(s, "{:>5}  {:>8}  {:>6}  {:>6}", "class", "AP", "gt", "dets").unwrap();
        for c in &self.classes {
            writeln!(s, "{:>5}  {:>8.4}  {:>6}  {:>6}", c.class_id, c.ap, c.ground_truths, c.detections).unwrap();
        }
        writeln!(s, "{:>5}  {:>8.4}", "mAP", self.map).unwrap();
        let thr = if self.f1_threshold.is_finite() { format!("{:.4}", self.f1_threshold) } else { "n/a".into() };
        writeln!(s, "precision {:.4}  recall {:.4}  (at max-F1 score threshold {thr})", self.precision, self.recall).unwrap();
        s
    }

    /// `class,ap` rows and a final `mAP` row.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("class,ap\n");
        for c in &self.classes {
            writeln!(s, "{},{}", c.class_id, c.ap).unwrap();
        }
        writeln!(s, "mAP,{}", self.map).unwrap();
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detection::BBox;

    fn obj(c: usize, x: f64) -> Object {
        Object { class_id: c, bbox: BBox { xmin: x, ymin: 0.0, xmax: x + 10.0, ymax: 10.0 } }
    }

    fn det(c: usize, x: f64, score: f64) -> Detection {
        Detection { bbox: obj(c, x).bbox, class_id: c, score }
    }

    #[test]
    fn perfect_detections_give_map_one() {
        let gt = vec![vec![obj(1, 0.0), obj(2, 50.0)], vec![obj(1, 20.0)]];
        let dets = vec![vec![det(1, 0.0, 0.9), det(2, 50.0, 0.8)], vec![det(1, 20.0, 0.7)]];
        let r = evaluate(&dets, &gt, 2, 0.5).unwrap();
        assert_eq!(r.map, 1.0);
        assert_eq!((r.precision, r.recall), (1.0, 1.0));
    }

    #[test]
    fn no_detections_give_zero() {
        let r = evaluate(&[vec![]], &[vec![obj(1, 0.0)]], 1, 0.5).unwrap();
        assert_eq!((r.map, r.recall), (0.0, 0.0));
    }

    #[test]
    fn duplicate_is_a_false_positive() {
        let r = evaluate(&[vec![det(1, 0.0, 0.9), det(1, 0.0, 0.8)]], &[vec![obj(1, 0.0)]], 1, 0.5).unwrap();
        assert_eq!(r.classes[0].pr_curve, vec![(1.0, 1.0), (1.0, 0.5)]);
        assert_eq!(r.map, 1.0);
    }

    #[test]
    fn bad_class_is_rejected() {
        assert!(evaluate(&[vec![det(3, 0.0, 0.9)]], &[vec![]], 2, 0.5).is_err());
    }

    #[test]
    fn csv_has_map_row() {
        let r = evaluate(&[vec![]], &[vec![obj(1, 0.0)]], 1, 0.5).unwrap();
        assert!(r.to_csv().ends_with("mAP,0\n"));
    }
}
