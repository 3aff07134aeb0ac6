use vssa_autodiff::{CustomOp, Real, Tape, Tensor, Var};

use super::matching::MatchResult;
use crate::{Error, Result};

/// `0.5 x^2` for `|x| < 1`, `|x| - 0.5` otherwise.
pub fn smooth_l1(x: f64) -> f64 {
    if x.abs() < 1.0 {
        0.5 * x * x
    } else {
        x.abs() - 0.5
    }
}

pub fn smooth_l1_grad(x: f64) -> f64 {
    if x.abs() < 1.0 {
        x
    } else {
        x.signum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossConfig {
    /// Weight of the localization term.
    pub alpha: f64,
    /// Hard negatives kept per positive (per image, at least one positive assumed).
    pub negative_ratio: usize,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig { alpha: 0.1, negative_ratio: 3 }
    }
}

/// Unnormalized breakdown of one loss evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossParts {
    pub classification: f64,
    pub localization: f64,
    pub positives: usize,
    pub negatives: usize,
}

#[derive(Debug, Clone)]
pub struct LossOutput {
    /// Scalar loss on the tape.
    pub loss: Var,
    pub parts: LossParts,
}

struct MultiboxOp<T: Real> {
    grad: Tensor<T>,
}

impl<T: Real> CustomOp<T> for MultiboxOp<T> {
    fn name(&self) -> &'static str {
        "multibox_loss"
    }

    fn backward(&self, _: &[&Tensor<T>], _: &Tensor<T>, grad_output: &Tensor<T>) -> Vec<Option<Tensor<T>>> {
        let g = grad_output.data()[0];
        vec![Some(self.grad.map(|v| v * g))]
    }
}

/// Cross-entropy plus `alpha` times smooth-L1 over predictions `[N, M, C+5]`.
///
/// Every positive anchor contributes; background anchors are ranked by their
/// cross-entropy and only the `negative_ratio * max(positives, 1)` hardest of
/// each image are kept. The sum is divided by the batch's positive count
/// (at least 1). The negative selection is treated as constant when
/// differentiating.
pub fn multibox_loss<T: Real>(tape: &mut Tape<T>, predictions: Var, matches: &[MatchResult], cfg: &LossConfig) -> Result<LossOutput> {
    let shape = tape.shape(predictions).to_vec();
    let [n, m, k] = match shape[..] {
        [n, m, k] if k > 5 => [n, m, k],
        _ => return Err(Error::Config(format!("loss expects predictions [N, M, C+5], got {shape:?}"))),
    };
    let classes = k - 4;
    if matches.len() != n {
        return Err(Error::Config(format!("{} match results for a batch of {n}", matches.len())));
    }
    let pred = tape.value(predictions).data();
    let mut grad = vec![0.0f64; pred.len()];
    let mut parts = LossParts::default();
    let mut selected: Vec<(usize, usize)> = Vec::new();

    let mut probs = vec![0.0; classes];
    let ce_and_probs = |row: &[T], label: usize, probs: &mut [f64]| -> f64 {
        let max = row[..classes].iter().map(|v| v.as_f64()).fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for (p, v) in probs.iter_mut().zip(&row[..classes]) {
            *p = (v.as_f64() - max).exp();
            total += *p;
        }
        probs.iter_mut().for_each(|p| *p /= total);
        max + total.ln() - row[label].as_f64()
    };

    for (img, mr) in matches.iter().enumerate() {
        if mr.labels.len() != m || mr.targets.len() != m {
            return Err(Error::Config(format!("match result covers {} anchors, predictions {m}", mr.labels.len())));
        }
        if let Some(&l) = mr.labels.iter().find(|&&l| l >= classes) {
            return Err(Error::Data(format!("label {l} outside 0..={}", classes - 1)));
        }
        let mut negatives = Vec::new();
        let mut pos = 0;
        for a in 0..m {
            let off = (img * m + a) * k;
            let row = &pred[off..off + k];
            if mr.labels[a] > 0 {
                pos += 1;
                selected.push((off, mr.labels[a]));
                parts.classification += ce_and_probs(row, mr.labels[a], &mut probs);
                for j in 0..4 {
                    let d = row[classes + j].as_f64() - mr.targets[a][j];
                    parts.localization += smooth_l1(d);
                    grad[off + classes + j] = cfg.alpha * smooth_l1_grad(d);
                }
            } else {
                negatives.push((ce_and_probs(row, 0, &mut probs), a));
            }
        }
        let keep = (cfg.negative_ratio * pos.max(1)).min(negatives.len());
        negatives.sort_by(|x, y| y.0.total_cmp(&x.0).then(x.1.cmp(&y.1)));
        for &(ce, a) in &negatives[..keep] {
            parts.classification += ce;
            selected.push(((img * m + a) * k, 0));
        }
        parts.positives += pos;
        parts.negatives += keep;
    }
    if parts.positives == 0 && parts.negatives == 0 {
        return Err(Error::EmptyLoss);
    }

    for &(off, label) in &selected {
        ce_and_probs(&pred[off..off + k], label, &mut probs);
        for (c, p) in probs.iter().enumerate() {
            grad[off + c] = p - if c == label { 1.0 } else { 0.0 };
        }
    }
    let norm = parts.positives.max(1) as f64;
    let value = (parts.classification + cfg.alpha * parts.localization) / norm;
    let grad = Tensor::new(shape, grad.into_iter().map(|g| T::of(g / norm)).collect())?;
    let loss = tape.custom(&[predictions], Tensor::scalar(T::of(value)), Box::new(MultiboxOp { grad }));
    Ok(LossOutput { loss, parts })
}
