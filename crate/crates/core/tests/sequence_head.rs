//! Attention normalization and capsule locality of the sequence head.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vssa::autodiff::{Tape, Tensor};
use vssa::head::VssaHead;
use vssa::nn::ParamStore;
use vssa::Orientation;

fn head(channels: usize, len: usize, orientation: Orientation, seed: u64) -> (VssaHead, ParamStore<f32>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let h = VssaHead::new(&mut store, "h", channels, 8, len, orientation, 40, &mut rng).unwrap();
    (h, store)
}

fn run(h: &VssaHead, store: &ParamStore<f32>, map: &Tensor<f32>) -> (Vec<f32>, Vec<Tensor<f32>>) {
    let mut tape = Tape::new();
    let p = store.bind(&mut tape, false);
    let m = tape.constant(map.clone());
    let (rows, att) = h.forward(&mut tape, &p, m).unwrap();
    (tape.value(rows).data().to_vec(), att.iter().map(|&a| tape.value(a).clone()).collect())
}

#[test]
fn attention_weights_are_a_distribution() {
    for (len, seed) in [(3, 0), (4, 1)] {
        let (h, store) = head(16, len, Orientation::Vertical, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 10);
        // 10 images of 10x10 = 1000 capsules
        let map = Tensor::from_fn([10, 16, 10, 10], |_| rng.gen_range(-3.0..3.0f32));
        let (_, att) = run(&h, &store, &map);
        assert_eq!(att.len(), len);
        for a in &att {
            assert_eq!(a.shape(), &[1000, len]);
            for row in a.data().chunks(len) {
                let sum: f64 = row.iter().map(|&v| v as f64).sum();
                assert!((sum - 1.0).abs() <= 1e-6, "sum {sum}");
                assert!(row.iter().all(|&v| v > 0.0));
            }
        }
    }
}

/// Map cells that feed location `(x, y)` of a vertical capsule of length `len`.
fn in_capsule(x: usize, y: usize, len: usize, px: usize, py: usize) -> bool {
    px == x && py <= y && y - py < len
}

#[test]
fn predictions_only_depend_on_their_capsule() {
    let (c, hgt, w, len) = (6, 7, 5, 3);
    let (h, store) = head(c, len, Orientation::Vertical, 4);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let map = Tensor::from_fn([1, c, hgt, w], |_| rng.gen_range(-1.0..1.0f32));
    let (base, _) = run(&h, &store, &map);
    let outputs = 40;
    let mut probes = 0;
    while probes < 100 {
        let (x, y) = (rng.gen_range(0..w), rng.gen_range(0..hgt));
        let (px, py, ch) = (rng.gen_range(0..w), rng.gen_range(0..hgt), rng.gen_range(0..c));
        let mut perturbed = map.clone();
        perturbed.data_mut()[(ch * hgt + py) * w + px] += rng.gen_range(0.5..2.0);
        let (after, _) = run(&h, &store, &perturbed);
        let loc = y * w + x;
        let same = base[loc * outputs..(loc + 1) * outputs] == after[loc * outputs..(loc + 1) * outputs];
        if in_capsule(x, y, len, px, py) {
            assert!(!same, "probe inside the capsule of ({x},{y}) had no effect");
        } else {
            assert!(same, "({px},{py}) leaked into ({x},{y})");
            probes += 1;
        }
    }
}

#[test]
fn horizontal_capsules_read_rows() {
    let (c, hgt, w, len) = (4, 5, 6, 3);
    let (h, store) = head(c, len, Orientation::Horizontal, 6);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let map = Tensor::from_fn([1, c, hgt, w], |_| rng.gen_range(-1.0..1.0f32));
    let (base, _) = run(&h, &store, &map);
    // perturb (x=2, y=1): moves (2..=4, 1) only
    let mut perturbed = map.clone();
    perturbed.data_mut()[w + 2] += 1.0;
    let (after, _) = run(&h, &store, &perturbed);
    for y in 0..hgt {
        for x in 0..w {
            let loc = y * w + x;
            let changed = base[loc * 40..(loc + 1) * 40] != after[loc * 40..(loc + 1) * 40];
            assert_eq!(changed, y == 1 && (2..=4).contains(&x), "({x},{y})");
        }
    }
}

#[test]
fn zero_capsule_gives_zero_encoder_states() {
    let (h, store) = head(5, 3, Orientation::Vertical, 8);
    let mut tape = Tape::<f32>::new();
    let p = store.bind(&mut tape, false);
    let zero = tape.constant(Tensor::zeros([4, 5]));
    // biases start at zero except the forget gate, so h stays 0 when inputs are 0
    let enc = h.encode(&mut tape, &p, &[zero, zero, zero]).unwrap();
    for s in &enc.states {
        assert!(tape.value(*s).data().iter().all(|&v| v == 0.0));
    }
}
