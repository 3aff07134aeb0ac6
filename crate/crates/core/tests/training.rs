//! Training loop contracts: determinism, scale sampling, convergence.

use vssa::dataset::{generate_samples, LabeledImage, SceneSpec};
use vssa::trainer::{TrainConfig, Trainer};
use vssa::Error;

fn data(count: usize, side: usize, seed: u64) -> Vec<LabeledImage> {
    let spec = SceneSpec { width: side, height: side, seed, ..SceneSpec::default() };
    generate_samples(&spec, count)
        .into_iter()
        .enumerate()
        .map(|(i, s)| LabeledImage { path: format!("{i}.ppm").into(), image: s.image, objects: s.objects })
        .collect()
}

fn tiny() -> TrainConfig {
    TrainConfig { width: 0.125, hidden: 8, batch_size: 2, base_size: 96, learning_rate: 0.003, ..TrainConfig::default() }
}

#[test]
fn same_seed_same_loss_history() {
    let d = data(4, 128, 1);
    let run = || {
        let mut t = Trainer::new(tiny()).unwrap();
        t.train(&d, 6, |_| {}).unwrap();
        t.history
    };
    let (a, b) = (run(), run());
    assert_eq!(a, b);
    let mut other = Trainer::new(TrainConfig { seed: 1, ..tiny() }).unwrap();
    other.train(&d, 6, |_| {}).unwrap();
    assert_ne!(other.history, a);
}

#[test]
fn scales_pick_the_input_sizes() {
    let d = data(2, 128, 2);
    let mut t = Trainer::new(TrainConfig { scales: vec![1.0], base_size: 300, batch_size: 1, ..tiny() }).unwrap();
    t.train(&d, 2, |_| {}).unwrap();
    assert!(t.history.iter().all(|r| r.input_size == 300));

    let mut t = Trainer::new(tiny()).unwrap();
    t.train(&d, 12, |_| {}).unwrap();
    let sizes: std::collections::BTreeSet<_> = t.history.iter().map(|r| r.input_size).collect();
    assert!(sizes.iter().all(|s| [72, 96, 120].contains(s)), "{sizes:?}");
    assert!(sizes.len() > 1);
}

#[test]
fn empty_training_set_is_rejected() {
    let mut t = Trainer::new(tiny()).unwrap();
    assert!(matches!(t.step(&[]), Err(Error::Data(_))));
}

#[test]
fn sample_that_degenerates_is_skipped() {
    let mut d = data(2, 128, 3);
    // a sliver that vanishes at every training size
    d[0].objects = vec![vssa::dataset::Object { class_id: 1, bbox: vssa::detection::BBox::new(5.0, 5.0, 5.5, 40.0).unwrap() }];
    let mut t = Trainer::new(TrainConfig { batch_size: 2, ..tiny() }).unwrap();
    t.train(&d, 2, |_| {}).unwrap();
}

#[test]
fn eight_images_five_hundred_iterations_cut_the_loss_tenfold() {
    let d = data(8, 300, 1);
    let cfg = TrainConfig { width: 0.125, hidden: 16, batch_size: 4, base_size: 150, scales: vec![1.0], learning_rate: 0.003, seed: 3, ..TrainConfig::default() };
    let mut t = Trainer::new(cfg).unwrap();
    t.train(&d, 500, |_| {}).unwrap();
    let first = t.history[0].loss;
    let last = vssa::trainer::moving_average(&t.history, 10).last().copied().unwrap();
    assert!(last < 0.1 * first, "initial {first}, final {last}");
}
