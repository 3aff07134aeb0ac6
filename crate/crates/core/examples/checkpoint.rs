//! Save, reload and inspect a checkpoint.

use vssa::autodiff::Tensor;
use vssa::trainer::Checkpoint;
use vssa::{Detector, ModelConfig};

fn main() {
    let det = Detector::<f32>::new(ModelConfig { width: 0.125, hidden: 8, ..ModelConfig::default() }, 2).unwrap();
    let path = std::env::temp_dir().join("vssa-example.ckpt");
    Checkpoint::capture(&det, None, 42, "width = 0.125\nhidden = 8\n").save(&path).unwrap();

    let ckpt = Checkpoint::load(&path).unwrap();
    println!("{}: iteration {}, {} parameter tensors", path.display(), ckpt.iteration(), ckpt.param_names().len());
    for name in ckpt.param_names().iter().take(5) {
        println!("  {name}");
    }

    let mut back = Detector::<f32>::new(det.config.clone(), 99).unwrap();
    back.load_params(ckpt.params()).unwrap();
    let x = Tensor::full([1, 3, 96, 96], 0.25f32);
    let same = det.infer(&x).unwrap().0.data() == back.infer(&x).unwrap().0.data();
    println!("reloaded forward identical: {same}");

    let mut bytes = std::fs::read(&path).unwrap();
    bytes.truncate(bytes.len() / 2);
    match Checkpoint::from_bytes(&bytes) {
        Err(e) => println!("truncated file: {e}"),
        Ok(_) => println!("truncated file decoded?"),
    }
    std::fs::remove_file(&path).ok();
}
