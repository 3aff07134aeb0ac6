//! A two-layer network on the tape, its gradients, and a finite-difference
//! check of the same function.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use vssa_autodiff::{GradCheck, Tape, Tensor};

fn main() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let x = Tensor::<f64>::uniform([4, 3], -1.0, 1.0, &mut rng);
    let w1 = Tensor::<f64>::uniform([3, 5], -0.5, 0.5, &mut rng);
    let w2 = Tensor::<f64>::uniform([5, 2], -0.5, 0.5, &mut rng);

    let net = |t: &mut Tape<f64>, v: &[vssa_autodiff::Var]| {
        let h = t.matmul(v[0], v[1])?;
        let h = t.tanh(h);
        let y = t.matmul(h, v[2])?;
        let p = t.softmax(y, 1)?;
        let sq = t.mul(p, p)?;
        Ok(t.sum(sq))
    };

    let mut tape = Tape::new();
    let vars: Vec<_> = [&x, &w1, &w2].iter().map(|v| tape.variable((*v).clone())).collect();
    let out = net(&mut tape, &vars).unwrap();
    println!("output {:.6} from {} tape nodes", tape.value(out).data()[0], tape.len());
    let grads = tape.backward(out).unwrap();
    let g = grads.get(vars[1]).unwrap();
    println!("max |d/dw1| = {:.2e}", g.data().iter().fold(0.0f64, |m, v| m.max(v.abs())));

    let report = GradCheck::new(1e-6).run(net, &[x, w1, w2]).unwrap();
    println!("{} coordinates checked, max relative error {:.2e}, passed {}", report.checked, report.max_rel_error, report.passed);
}
