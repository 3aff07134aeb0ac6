//! Attention weights over one vertical capsule of the 10x10 map.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vssa::autodiff::{Tape, Tensor};
use vssa::head::{extract_capsules, LevelHead};
use vssa::{Detector, ModelConfig, Orientation};

fn main() {
    let det = Detector::<f64>::new(ModelConfig { width: 0.125, hidden: 16, ..ModelConfig::default() }, 4).unwrap();
    let LevelHead::Sequence(head) = &det.heads[1] else { unreachable!() };
    let channels = det.features.pyramid_channels()[1];

    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let map = Tensor::from_fn([1, channels, 10, 10], |_| rng.gen_range(-1.0..1.0));

    let capsules = extract_capsules(&map, head.capsule_len, Orientation::Vertical).unwrap();
    let top = capsules.iter().find(|c| c.anchor == (3, 0)).unwrap();
    let zeros = top.features.iter().filter(|v| v.iter().all(|&x| x == 0.0)).count();
    println!("capsule at (3,0) has {zeros} zero-padded cells above the map edge");

    let mut tape = Tape::new();
    let p = det.params.bind(&mut tape, false);
    let m = tape.constant(map);
    let (_, attention) = head.forward(&mut tape, &p, m).unwrap();
    let location = 6 * 10 + 3; // (x=3, y=6)
    for (t, a) in attention.iter().enumerate() {
        let a = tape.value(*a);
        let row = &a.data()[location * head.capsule_len..(location + 1) * head.capsule_len];
        let fmt: Vec<String> = row.iter().map(|w| format!("{w:.4}")).collect();
        println!("step {}: [{}] sum {:.12}", t + 1, fmt.join(", "), row.iter().sum::<f64>());
    }
}
