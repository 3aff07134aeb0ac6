//! 11-point AP on a hand-made ranking.

use vssa::dataset::Object;
use vssa::detection::{BBox, Detection};
use vssa::evaluator::evaluate;

fn main() {
    let b = |x: f64| BBox::new(x, 10.0, x + 20.0, 30.0).unwrap();
    let truth = vec![vec![Object { class_id: 1, bbox: b(0.0) }, Object { class_id: 1, bbox: b(50.0) }, Object { class_id: 2, bbox: b(100.0) }]];
    let dets = vec![vec![
        Detection { bbox: b(0.0), class_id: 1, score: 0.95 },
        Detection { bbox: b(200.0), class_id: 1, score: 0.90 },
        Detection { bbox: b(52.0), class_id: 1, score: 0.60 },
        Detection { bbox: b(0.0), class_id: 1, score: 0.50 },
        Detection { bbox: b(101.0), class_id: 2, score: 0.40 },
    ]];
    let report = evaluate(&dets, &truth, 2, 0.5).unwrap();
    for c in &report.classes {
        println!("class {}: AP {:.4} ({} detections, {} ground truths)", c.class_id, c.ap, c.detections, c.ground_truths);
    }
    println!("mAP {:.4}", report.map);
    for m in &report.matches {
        println!("  score {:.2} iou {:.2} {}", m.score, m.iou, if m.true_positive { "TP" } else { "FP" });
    }
}
