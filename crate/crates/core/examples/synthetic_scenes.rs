//! Render a few pole scenes and write them with their annotations.
//!
//! `cargo run --release --example synthetic_scenes [out_dir]`

use std::path::PathBuf;

use vssa::dataset::{generate_scene, write_dataset, SceneSpec};

fn main() {
    let out: PathBuf = std::env::args().nth(1).unwrap_or_else(|| "scenes".into()).into();
    let spec = SceneSpec { seed: 11, distractors: (2, 3), ..SceneSpec::default() };

    let sample = generate_scene(&spec);
    for p in &sample.placements {
        let kind = if p.labeled { "sign" } else { "look-alike" };
        println!(
            "class {} {kind:<10} box ({:.0},{:.0})-({:.0},{:.0}) pole {}",
            p.class_id,
            p.bbox.xmin,
            p.bbox.ymin,
            p.bbox.xmax,
            p.bbox.ymax,
            p.pole.map_or("none".to_string(), |b| format!("{:.0}px", b.height()))
        );
    }

    write_dataset(&out, &spec, 6, 2, true).unwrap();
    println!("wrote 6 train and 2 test images to {}", out.display());
}
