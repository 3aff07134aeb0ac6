//! Pyramid sizes for a few input sizes, all served by one set of weights.

use vssa::autodiff::Tensor;
use vssa::{Detector, ModelConfig, Orientation};

fn main() {
    for orientation in [Orientation::Vertical, Orientation::Horizontal, Orientation::None] {
        let cfg = ModelConfig { width: 0.25, orientation, ..ModelConfig::default() };
        let det = Detector::<f32>::new(cfg, 0).unwrap();
        println!("{orientation}: {} parameters in {} tensors", det.params.numel(), det.params.len());
    }

    let det = Detector::<f32>::new(ModelConfig { width: 0.25, ..ModelConfig::default() }, 0).unwrap();
    println!("channels (p19, p10, p5): {:?}", det.features.pyramid_channels());
    for side in [225, 300, 375] {
        let (pred, levels) = det.infer(&Tensor::zeros([1, 3, side, side])).unwrap();
        println!("{side:>4} px -> {levels:?}, predictions {:?}", pred.shape());
    }
}
