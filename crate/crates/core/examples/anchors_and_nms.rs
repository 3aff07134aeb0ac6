//! Anchor layout, matching of two signs, target encoding and NMS.

use vssa::detection::{decode, generate_anchors, greedy_nms, iou, match_anchors, BBox, Detection, POSITIVE_IOU};
use vssa::mrfeature::pyramid_sizes;

fn main() {
    let levels = pyramid_sizes(300, 300);
    let anchors = generate_anchors(&levels, 300).unwrap();
    println!("{} anchors over levels {levels:?}", anchors.len());

    let gts = [BBox::new(40.0, 30.0, 95.0, 85.0).unwrap(), BBox::new(180.0, 120.0, 200.0, 140.0).unwrap()];
    let m = match_anchors(&anchors, &gts, &[1, 3], POSITIVE_IOU, (300.0, 300.0)).unwrap();
    for (g, gt) in gts.iter().enumerate() {
        let mine: Vec<usize> = (0..anchors.len()).filter(|&i| m.assigned[i] == Some(g)).collect();
        let best = mine.iter().map(|&i| iou(&anchors[i].to_box(), gt)).fold(0.0, f64::max);
        let back = decode(&anchors[mine[0]].to_box(), &m.targets[mine[0]]);
        println!(
            "gt {g}: {} positive anchors, best IoU {best:.3}, decoded target IoU {:.6}",
            mine.len(),
            iou(&back, gt)
        );
    }

    let raw = vec![
        Detection { bbox: gts[0], class_id: 1, score: 0.9 },
        Detection { bbox: gts[0].translate(4.0, 2.0), class_id: 1, score: 0.8 },
        Detection { bbox: gts[0].translate(4.0, 2.0), class_id: 2, score: 0.7 },
        Detection { bbox: gts[1], class_id: 3, score: 0.6 },
    ];
    let kept = greedy_nms(raw, 0.45);
    println!("nms keeps {} of 4:", kept.len());
    for d in kept {
        println!("  class {} score {:.2}", d.class_id, d.score);
    }
}
