//! Named finite-difference checks for every differentiable building block.

use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use vssa_autodiff::{grad_check, GradCheckReport, Padding, SpatialAxis, Tape, Tensor, Var};

use crate::detection::{multibox_loss, LossConfig, MatchResult};
use crate::head::{Orientation, VssaHead};
use crate::nn::{AttentionCell, Bound, LstmCell, ParamStore, SeparableBlock};
use crate::{Error, Result};

/// Relative-error bound every case must stay under.
pub const TOLERANCE: f64 = 1e-4;
/// Seeds each case is checked at.
pub const SEEDS: [u64; 5] = [0, 1, 2, 3, 4];

type Case = fn(u64) -> Result<GradCheckReport>;

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::uniform(shape.to_vec(), -1.0, 1.0, rng)
}

fn lower(e: Error) -> vssa_autodiff::Error {
    match e {
        Error::Tensor(t) => t,
        other => vssa_autodiff::Error::Config(other.to_string()),
    }
}

fn check(inputs: Vec<Tensor<f64>>, f: impl Fn(&mut Tape<f64>, &[Var]) -> Result<Var>) -> Result<GradCheckReport> {
    Ok(grad_check(|t, v| f(t, v).map_err(lower), &inputs, TOLERANCE)?)
}

/// Checks a block whose parameters live in `store`; input 0 is the data.
fn check_block(x: Tensor<f64>, store: &ParamStore<f64>, f: impl Fn(&mut Tape<f64>, &Bound, Var) -> Result<Var>) -> Result<GradCheckReport> {
    let mut inputs = vec![x];
    inputs.extend(store.iter().map(|p| p.value.clone()));
    check(inputs, |t, v| f(t, &Bound::from_vars(v[1..].to_vec()), v[0]))
}

fn conv2d(seed: u64) -> Result<GradCheckReport> {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let inputs = vec![random(&[1, 2, 5, 5], &mut r), random(&[3, 2, 3, 3], &mut r), random(&[3], &mut r)];
    check(inputs, |t, v| Ok(t.conv2d(v[0], v[1], Some(v[2]), 2, Padding::Same)?))
}

fn depthwise(seed: u64) -> Result<GradCheckReport> {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    check(vec![random(&[1, 3, 6, 6], &mut r), random(&[3, 1, 3, 3], &mut r)], |t, v| {
        Ok(t.depthwise_conv2d(v[0], v[1], 1, Padding::Same)?)
    })
}

fn transposed(seed: u64) -> Result<GradCheckReport> {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let inputs = vec![random(&[1, 2, 4, 4], &mut r), random(&[2, 3, 3, 3], &mut r), random(&[3], &mut r)];
    check(inputs, |t, v| Ok(t.conv_transpose2d(v[0], v[1], Some(v[2]), 2, (8, 8))?))
}

fn elementwise(seed: u64) -> Result<GradCheckReport> {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    check(vec![random(&[3, 4], &mut r), random(&[3, 4], &mut r), random(&[4, 2], &mut r)], |t, v| {
        let s = t.add(v[0], v[1])?;
        let m = t.mul(s, v[1])?;
        let a = t.relu(m);
        let b = t.sigmoid(v[0]);
        let c = t.tanh(v[1]);
        let d = t.mul(b, c)?;
        let e = t.add(a, d)?;
        Ok(t.matmul(e, v[2])?)
    })
}

fn shape_and_reduction(seed: u64) -> Result<GradCheckReport> {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let w = random(&[2, 3, 4], &mut r);
    let inputs = vec![random(&[2, 3, 2, 2], &mut r), random(&[5, 3], &mut r), random(&[5], &mut r), random(&[3], &mut r), random(&[8, 1], &mut r)];
    check(inputs, move |t, v| {
        let shifted = t.channel_affine(v[0], None, Some(v[3]))?;
        let rows = t.nchw_to_rows(shifted)?;
        let rows = t.scale_rows(rows, v[4])?;
        let lin = t.linear(rows, v[1], Some(v[2]))?;
        let parts = t.split(lin, 1, &[2, 3])?;
        let head = t.slice(parts[1], 1, 1, 2)?;
        let d = t.sub(parts[0], head)?;
        let d = t.scale(d, 0.5);
        let total = t.sum(d);
        let back = t.reshape(rows, &[2, 3, 4])?;
        let ws = t.weighted_sum(back, w.clone())?;
        Ok(t.concat(&[total, ws], 0)?)
    })
}

fn softmax_concat(seed: u64) -> Result<GradCheckReport> {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    check(vec![random(&[2, 3, 2], &mut r), random(&[2, 2, 2], &mut r)], |t, v| {
        let c = t.concat(&[v[0], v[1]], 1)?;
        Ok(t.softmax(c, 1)?)
    })
}

fn l2_normalize(seed: u64) -> Result<GradCheckReport> {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    check(vec![random(&[1, 4, 3, 3], &mut r), random(&[4], &mut r)], |t, v| {
        let n = t.l2_normalize(v[0])?;
        Ok(t.channel_affine(n, Some(v[1]), None)?)
    })
}

fn separable(seed: u64) -> Result<GradCheckReport> {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let block = SeparableBlock::new(&mut store, "b", 3, 4, 2, &mut r);
    for p in store.iter_mut() {
        p.value = random(p.value.shape(), &mut r);
    }
    check_block(random(&[1, 3, 5, 5], &mut r), &store, |t, p, x| block.forward(t, p, x))
}

fn lstm(seed: u64) -> Result<GradCheckReport> {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let cell = LstmCell::new(&mut store, "l", 3, 4, &mut r);
    let mut inputs = vec![random(&[2, 4], &mut r), random(&[2, 4], &mut r), random(&[2, 3], &mut r)];
    inputs.extend(store.iter().map(|p| p.value.clone()));
    check(inputs, |t, v| {
        let (h, c) = cell.step(t, &Bound::from_vars(v[3..].to_vec()), v[0], v[1], v[2])?;
        Ok(t.concat(&[h, c], 1)?)
    })
}

fn attention(seed: u64) -> Result<GradCheckReport> {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let cell = AttentionCell::new(&mut store, "a", 4, 4, &mut r);
    let mut inputs: Vec<Tensor<f64>> = (0..4).map(|_| random(&[2, 4], &mut r)).collect();
    inputs.extend(store.iter().map(|p| p.value.clone()));
    check(inputs, |t, v| {
        let p = Bound::from_vars(v[4..].to_vec());
        let a = cell.scores(t, &p, &v[..3], v[3])?;
        let ctx = AttentionCell::attend(t, a, &v[..3])?;
        Ok(t.concat(&[a, ctx], 1)?)
    })
}

fn vssa_head(seed: u64) -> Result<GradCheckReport> {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let head = VssaHead::new(&mut store, "v", 3, 8, 3, Orientation::Vertical, 6, &mut r)?;
    check_block(random(&[1, 3, 4, 2], &mut r), &store, |t, p, x| Ok(head.forward(t, p, x)?.0))
}

fn capsule_gather(seed: u64) -> Result<GradCheckReport> {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    check(vec![random(&[2, 3, 3, 4], &mut r)], |t, v| {
        let a = t.gather_shifted(v[0], 1, SpatialAxis::Height)?;
        let b = t.gather_shifted(v[0], 2, SpatialAxis::Width)?;
        Ok(t.concat(&[a, b], 1)?)
    })
}

fn multibox(seed: u64) -> Result<GradCheckReport> {
    use rand::Rng;
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let (n, m, classes) = (2, 12, 3);
    let preds = random(&[n, m, classes + 5], &mut r);
    let matches: Vec<MatchResult> = (0..n)
        .map(|_| {
            let labels: Vec<usize> = (0..m).map(|_| if r.gen_bool(0.25) { r.gen_range(1..=classes) } else { 0 }).collect();
            let targets = labels.iter().map(|&l| if l > 0 { [0.0; 4].map(|_| r.gen_range(-1.5..1.5)) } else { [0.0; 4] }).collect();
            MatchResult { labels, targets, assigned: vec![None; m] }
        })
        .collect();
    check(vec![preds], move |t, v| Ok(multibox_loss(t, v[0], &matches, &LossConfig::default())?.loss))
}

/// Every registered case by name.
pub fn cases() -> Vec<(&'static str, Case)> {
    vec![
        ("conv2d", conv2d as Case),
        ("depthwise_conv2d", depthwise),
        ("transposed_conv2d", transposed),
        ("elementwise", elementwise),
        ("shape_and_reduction", shape_and_reduction),
        ("softmax_concat", softmax_concat),
        ("l2_normalize", l2_normalize),
        ("capsule_gather", capsule_gather),
        ("separable_block", separable),
        ("lstm_cell", lstm),
        ("attention_cell", attention),
        ("vssa_head", vssa_head),
        ("multibox_loss", multibox),
    ]
}

/// Outcome of one case over all seeds.
#[derive(Debug, Clone)]
pub struct CaseResult {
    pub name: &'static str,
    pub max_rel_error: f64,
    pub passed: bool,
    pub elapsed: Duration,
    pub error: Option<String>,
}

/// Runs the named case (or every case for `"all"`) at [`SEEDS`].
pub fn run(name: &str) -> Result<Vec<CaseResult>> {
    let selected: Vec<_> = cases().into_iter().filter(|(n, _)| name == "all" || *n == name).collect();
    if selected.is_empty() {
        let known: Vec<_> = cases().iter().map(|c| c.0).collect();
        return Err(Error::Config(format!("unknown gradcheck `{name}`; known: all, {}", known.join(", "))));
    }
    Ok(selected
        .into_iter()
        .map(|(name, case)| {
            let start = Instant::now();
            let mut worst: f64 = 0.0;
            let mut error = None;
            for seed in SEEDS {
                match case(seed) {
                    Ok(r) => worst = worst.max(r.max_rel_error),
                    Err(e) => {
                        error = Some(format!("seed {seed}: {e}"));
                        break;
                    }
                }
            }
            CaseResult { name, max_rel_error: worst, passed: error.is_none() && worst < TOLERANCE, elapsed: start.elapsed(), error }
        })
        .collect())
}
