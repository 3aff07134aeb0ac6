//! Drive a small detector to zero training error on eight scenes.
//!
//! `cargo run --release --example overfit [iterations]`

use std::time::Instant;

use vssa::dataset::{generate_samples, Image, LabeledImage, Object, SceneSpec};
use vssa::detection::NmsConfig;
use vssa::evaluator::evaluate;
use vssa::pipeline::{detect, AnchorCache};
use vssa::trainer::{moving_average, TrainConfig, Trainer};

fn main() {
    let iterations: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(1000);
    let data: Vec<LabeledImage> = generate_samples(&SceneSpec { seed: 1, ..SceneSpec::default() }, 8)
        .into_iter()
        .enumerate()
        .map(|(i, s)| LabeledImage { path: format!("{i}.ppm").into(), image: s.image, objects: s.objects })
        .collect();

    let cfg = TrainConfig {
        width: 0.125,
        hidden: 16,
        batch_size: 4,
        base_size: 150,
        scales: vec![1.0],
        learning_rate: 0.003,
        iterations,
        seed: 3,
        ..TrainConfig::default()
    };
    let mut trainer = Trainer::new(cfg.clone()).unwrap();
    let start = Instant::now();
    trainer
        .train(&data, iterations, |r| {
            if r.iteration % 100 == 0 {
                println!("{:>5} loss {:.4} ({} positives) {:.0?}", r.iteration, r.loss, r.positives, start.elapsed());
            }
        })
        .unwrap();

    let images: Vec<&Image> = data.iter().map(|d| &d.image).collect();
    let dets = detect(&trainer.detector, &images, cfg.base_size, &NmsConfig::default(), &mut AnchorCache::default()).unwrap();
    let truth: Vec<Vec<Object>> = data.iter().map(|d| d.objects.clone()).collect();
    let report = evaluate(&dets, &truth, cfg.classes, 0.5).unwrap();
    let smoothed = moving_average(&trainer.history, 10);
    println!("train mAP {:.4}, final loss {:.4}", report.map, smoothed.last().unwrap());
}
