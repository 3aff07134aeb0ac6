//! Train briefly, then draw detections on a fresh scene.
//!
//! `cargo run --release --example detect_scene [out.ppm]`

use vssa::dataset::{generate_samples, generate_scene, write_ppm, LabeledImage, SceneSpec};
use vssa::detection::NmsConfig;
use vssa::pipeline::{detect, draw_box, AnchorCache};
use vssa::trainer::{TrainConfig, Trainer};

fn main() {
    let out = std::env::args().nth(1).unwrap_or_else(|| "detections.ppm".into());
    let data: Vec<LabeledImage> = generate_samples(&SceneSpec { seed: 7, ..SceneSpec::default() }, 64)
        .into_iter()
        .enumerate()
        .map(|(i, s)| LabeledImage { path: format!("{i}.ppm").into(), image: s.image, objects: s.objects })
        .collect();
    let cfg = TrainConfig {
        width: 0.125,
        hidden: 16,
        batch_size: 4,
        base_size: 150,
        learning_rate: 0.003,
        iterations: 400,
        ..TrainConfig::default()
    };
    let mut t = Trainer::new(cfg.clone()).unwrap();
    t.train(&data, cfg.iterations, |_| {}).unwrap();

    let scene = generate_scene(&SceneSpec { seed: 12345, ..SceneSpec::default() });
    let nms = NmsConfig { score_threshold: 0.1, ..NmsConfig::default() };
    let dets = detect(&t.detector, &[&scene.image], cfg.base_size, &nms, &mut AnchorCache::default()).unwrap();
    let mut canvas = scene.image.clone();
    for d in &dets[0] {
        println!("class {} score {:.3} at ({:.0},{:.0})-({:.0},{:.0})", d.class_id, d.score, d.bbox.xmin, d.bbox.ymin, d.bbox.xmax, d.bbox.ymax);
        draw_box(&mut canvas, &d.bbox, [255, 255, 0]);
    }
    for o in &scene.objects {
        println!("truth class {} at ({:.0},{:.0})-({:.0},{:.0})", o.class_id, o.bbox.xmin, o.bbox.ymin, o.bbox.xmax, o.bbox.ymax);
    }
    write_ppm(&out, &canvas).unwrap();
    println!("overlay written to {out}");
}
