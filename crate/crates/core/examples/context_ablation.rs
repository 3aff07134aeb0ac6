//! Train none / horizontal / vertical heads on pole scenes with look-alikes
//! and compare test mAP.
//!
//! `cargo run --release --example context_ablation [iterations] [seeds]`

use std::time::Instant;

use vssa::dataset::{generate_samples, Image, LabeledImage, Object, SceneSpec};
use vssa::detection::NmsConfig;
use vssa::evaluator::evaluate;
use vssa::pipeline::{detect, AnchorCache};
use vssa::trainer::{TrainConfig, Trainer};
use vssa::Orientation;

fn main() {
    let mut args = std::env::args().skip(1);
    let iterations: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(600);
    let seeds: u64 = args.next().and_then(|s| s.parse().ok()).unwrap_or(1);

    let spec = SceneSpec { seed: 2024, pole_rate: 1.0, distractors: (2, 3), ..SceneSpec::default() };
    let mut train: Vec<LabeledImage> = generate_samples(&spec, 700)
        .into_iter()
        .enumerate()
        .map(|(i, s)| LabeledImage { path: format!("{i}.ppm").into(), image: s.image, objects: s.objects })
        .collect();
    let test = train.split_off(500);
    let images: Vec<&Image> = test.iter().map(|d| &d.image).collect();
    let truth: Vec<Vec<Object>> = test.iter().map(|d| d.objects.clone()).collect();

    let start = Instant::now();
    for orientation in [Orientation::None, Orientation::Horizontal, Orientation::Vertical] {
        for seed in 0..seeds {
            let cfg = TrainConfig {
                width: 0.125,
                hidden: 16,
                batch_size: 4,
                base_size: 150,
                learning_rate: 0.003,
                iterations,
                orientation,
                seed,
                ..TrainConfig::default()
            };
            let mut t = Trainer::new(cfg.clone()).unwrap();
            t.train(&train, iterations, |_| {}).unwrap();
            let dets = detect(&t.detector, &images, cfg.base_size, &NmsConfig::default(), &mut AnchorCache::default()).unwrap();
            let map = evaluate(&dets, &truth, cfg.classes, 0.5).unwrap().map;
            println!("{:<10} seed {seed}: test mAP {map:.4}  [{:.0?}]", orientation.to_string(), start.elapsed());
        }
    }
}
