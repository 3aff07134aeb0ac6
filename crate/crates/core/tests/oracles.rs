//! Matching, suppression and AP against brute-force references.

mod common;

use common::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vssa::dataset::Object;
use vssa::detection::{greedy_nms, iou, match_anchors, BBox, Detection, POSITIVE_IOU};
use vssa::evaluator::{average_precision_11, evaluate};

const INSTANCES: u64 = 200;

#[test]
fn iou_matches_reference() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..2000 {
        let (a, b) = (random_box(&mut rng, 64.0), grid_box(&mut rng));
        assert!((iou(&a, &b) - ref_iou(&a, &b)).abs() < 1e-12);
        assert_eq!(iou(&a, &b), iou(&b, &a));
    }
}

#[test]
fn matching_matches_reference() {
    for seed in 0..INSTANCES {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let priors: Vec<BBox> = (0..rng.gen_range(1..=50)).map(|_| grid_box(&mut rng)).collect();
        let gts: Vec<BBox> = (0..rng.gen_range(0..=8)).map(|_| grid_box(&mut rng)).collect();
        let labels: Vec<usize> = gts.iter().map(|_| rng.gen_range(1..=3)).collect();
        let anchors: Vec<_> = priors.iter().map(anchor_from_box).collect();
        let got = match_anchors(&anchors, &gts, &labels, POSITIVE_IOU, (64.0, 64.0)).unwrap();
        let want = ref_match(&priors, &gts, POSITIVE_IOU);
        assert_eq!(got.assigned, want, "seed {seed}");
        for (a, g) in want.iter().enumerate() {
            assert_eq!(got.labels[a], g.map_or(0, |g| labels[g]));
        }
    }
}

#[test]
fn every_ground_truth_keeps_a_positive_when_anchors_suffice() {
    for seed in 0..INSTANCES {
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 1000);
        let priors: Vec<BBox> = (0..rng.gen_range(10..=50)).map(|_| grid_box(&mut rng)).collect();
        let gts: Vec<BBox> = (0..rng.gen_range(1..=8)).map(|_| grid_box(&mut rng)).collect();
        let anchors: Vec<_> = priors.iter().map(anchor_from_box).collect();
        let m = match_anchors(&anchors, &gts, &vec![1; gts.len()], POSITIVE_IOU, (64.0, 64.0)).unwrap();
        for g in 0..gts.len() {
            assert!(m.assigned.contains(&Some(g)), "seed {seed}: box {g} lost");
        }
    }
}

fn random_detections(rng: &mut ChaCha8Rng, n: usize) -> Vec<Detection> {
    (0..n)
        .map(|_| Detection {
            bbox: grid_box(rng),
            class_id: rng.gen_range(1..=2),
            // coarse scores so ties occur
            score: rng.gen_range(1..20) as f64 / 20.0,
        })
        .collect()
}

#[test]
fn nms_matches_reference() {
    for seed in 0..INSTANCES {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.gen_range(0..=50);
        let dets = random_detections(&mut rng, n);
        let t = [0.3, 0.45, 0.7][seed as usize % 3];
        assert_eq!(greedy_nms(dets.clone(), t), ref_nms(&dets, t), "seed {seed}");
    }
}

#[test]
fn nms_survivors_never_overlap_within_class() {
    for seed in 0..INSTANCES {
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 7);
        let kept = greedy_nms(random_detections(&mut rng, 50), 0.45);
        for (i, a) in kept.iter().enumerate() {
            for b in &kept[i + 1..] {
                assert!(a.class_id != b.class_id || iou(&a.bbox, &b.bbox) <= 0.45);
            }
            assert!(kept[i..].iter().all(|b| b.score <= a.score));
        }
    }
}

/// Single-class, single-image instance: ranked hit flags by brute force.
fn ref_hits(dets: &[Detection], gts: &[BBox], threshold: f64) -> Vec<bool> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| dets[b].score.partial_cmp(&dets[a].score).unwrap().then(a.cmp(&b)));
    let mut used = vec![false; gts.len()];
    let mut hits = Vec::new();
    for i in order {
        let ious: Vec<f64> = gts.iter().map(|g| ref_iou(&dets[i].bbox, g)).collect();
        let best = ious.iter().cloned().reduce(f64::max);
        let j = best.and_then(|m| ious.iter().position(|&v| v == m));
        match (j, best) {
            (Some(j), Some(m)) if m >= threshold && !used[j] => {
                used[j] = true;
                hits.push(true);
            }
            _ => hits.push(false),
        }
    }
    hits
}

#[test]
fn average_precision_matches_reference() {
    let mut checked = 0;
    for seed in 0..INSTANCES {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let gts: Vec<BBox> = (0..rng.gen_range(1..=10)).map(|_| grid_box(&mut rng)).collect();
        let n = rng.gen_range(0..=50);
        let dets: Vec<Detection> = (0..n)
            .map(|i| Detection {
                // jitter a ground truth half the time so there are hits
                bbox: if rng.gen_bool(0.5) { gts[rng.gen_range(0..gts.len())].translate(rng.gen_range(-4.0..4.0), 0.0) } else { grid_box(&mut rng) },
                class_id: 1,
                score: 1.0 - i as f64 / 64.0 - rng.gen_range(0.0..0.001),
            })
            .collect();
        let objects: Vec<Object> = gts.iter().map(|&bbox| Object { class_id: 1, bbox }).collect();
        let report = evaluate(&[dets.clone()], &[objects], 1, 0.5).unwrap();
        let want = ref_ap11(&ref_hits(&dets, &gts, 0.5), gts.len());
        assert!((report.classes[0].ap - want).abs() < 1e-9, "seed {seed}: {} vs {want}", report.classes[0].ap);
        assert!((report.map - want).abs() < 1e-9);
        checked += 1;
    }
    assert!(checked >= 100);
}

#[test]
fn ap_fixed_points() {
    assert_eq!(average_precision_11(&[]), 0.0);
    assert!((average_precision_11(&[(1.0, 1.0)]) - 1.0).abs() < 1e-12);
    // one hit among two ground truths: recall 0.5 reached at precision 1
    assert!((average_precision_11(&[(0.5, 1.0)]) - 6.0 / 11.0).abs() < 1e-12);
    // false positive then hit
    assert!((average_precision_11(&[(0.0, 0.0), (1.0, 0.5)]) - 0.5).abs() < 1e-12);
}

#[test]
fn perfect_detections_score_map_one() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let gts: Vec<Vec<Object>> = (0..5)
        .map(|_| (0..3).map(|c| Object { class_id: c + 1, bbox: random_box(&mut rng, 100.0) }).collect())
        .collect();
    let dets: Vec<Vec<Detection>> =
        gts.iter().map(|g| g.iter().map(|o| Detection { bbox: o.bbox, class_id: o.class_id, score: 0.9 }).collect()).collect();
    let r = evaluate(&dets, &gts, 3, 0.5).unwrap();
    assert_eq!(r.map, 1.0);
    assert_eq!((r.precision, r.recall), (1.0, 1.0));
}

#[test]
fn duplicate_detection_is_a_false_positive() {
    let b = BBox::new(10.0, 10.0, 30.0, 30.0).unwrap();
    let gt = vec![vec![Object { class_id: 1, bbox: b }]];
    let dets = vec![vec![Detection { bbox: b, class_id: 1, score: 0.9 }, Detection { bbox: b, class_id: 1, score: 0.8 }]];
    let r = evaluate(&dets, &gt, 1, 0.5).unwrap();
    assert_eq!(r.matches.iter().filter(|m| m.true_positive).count(), 1);
    assert_eq!(r.map, 1.0);
}
