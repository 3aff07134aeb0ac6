//! Central finite-difference verification of tape gradients.
//!
//! The function under test maps a set of `f64` inputs to an output of any
//! shape. Outputs are reduced to a scalar with fixed pseudo-random weights so
//! that every output element contributes. Each analytic partial is then
//! compared with `(L(x + eps) - L(x - eps)) / (2 eps)`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::{Error, Result, Tape, Tensor, Var};

/// Location of one checked partial derivative.
#[derive(Debug, Clone, PartialEq)]
pub struct Coordinate {
    pub input: usize,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst: Option<Coordinate>,
    pub checked: usize,
    pub tolerance: f64,
    pub passed: bool,
}

type Transform = Box<dyn Fn(f64) -> f64>;

/// Finite-difference gradient checker.
pub struct GradCheck {
    pub epsilon: f64,
    pub tolerance: f64,
    /// Lower bound on the relative-error denominator, so partials that are
    /// zero up to rounding are judged by absolute error.
    pub denominator_floor: f64,
    pub seed: u64,
    transform: Option<Transform>,
}

impl GradCheck {
    pub fn new(tolerance: f64) -> Self {
        GradCheck { epsilon: 1e-5, tolerance, denominator_floor: 1e-4, seed: 0x5eed, transform: None }
    }

    /// Applies `f` to every analytic partial before comparison (negative controls).
    pub fn with_gradient_transform(mut self, f: impl Fn(f64) -> f64 + 'static) -> Self {
        self.transform = Some(Box::new(f));
        self
    }

    pub fn run<F>(&self, f: F, inputs: &[Tensor<f64>]) -> Result<GradCheckReport>
    where
        F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
    {
        for (i, t) in inputs.iter().enumerate() {
            if let Some((idx, v)) = t.first_non_finite() {
                return Err(Error::NonFinite { location: format!("input {i}, element {idx}"), value: v });
            }
        }

        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|t| tape.variable(t.clone())).collect();
        let out = f(&mut tape, &vars)?;
        let out_shape = tape.shape(out).to_vec();
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let weights = Tensor::from_fn(out_shape, |_| rng.gen_range(-1.0..1.0));
        if let Some((idx, v)) = tape.value(out).first_non_finite() {
            return Err(Error::NonFinite { location: format!("output element {idx}"), value: v });
        }
        let loss = tape.weighted_sum(out, weights.clone())?;
        let grads = tape.backward(loss)?;

        let objective = |perturbed: &[Tensor<f64>]| -> Result<f64> {
            let mut tape = Tape::new();
            let vars: Vec<Var> = perturbed.iter().map(|t| tape.constant(t.clone())).collect();
            let out = f(&mut tape, &vars)?;
            let l: f64 = tape.value(out).data().iter().zip(weights.data()).map(|(a, b)| a * b).sum();
            Ok(l)
        };

        let mut report = GradCheckReport {
            max_rel_error: 0.0,
            worst: None,
            checked: 0,
            tolerance: self.tolerance,
            passed: true,
        };
        let mut work: Vec<Tensor<f64>> = inputs.to_vec();
        for (i, var) in vars.iter().enumerate() {
            let analytic = grads.get_or_zeros(*var, inputs[i].shape());
            for idx in 0..inputs[i].len() {
                let x0 = inputs[i].data()[idx];
                work[i].data_mut()[idx] = x0 + self.epsilon;
                let plus = objective(&work)?;
                work[i].data_mut()[idx] = x0 - self.epsilon;
                let minus = objective(&work)?;
                work[i].data_mut()[idx] = x0;

                let numeric = (plus - minus) / (2.0 * self.epsilon);
                let mut a = analytic.data()[idx];
                if let Some(t) = &self.transform {
                    a = t(a);
                }
                if !numeric.is_finite() || !a.is_finite() {
                    return Err(Error::NonFinite {
                        location: format!("gradient of input {i}, element {idx}"),
                        value: if a.is_finite() { numeric } else { a },
                    });
                }
                let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(self.denominator_floor);
                report.checked += 1;
                if rel > report.max_rel_error || report.worst.is_none() {
                    report.max_rel_error = report.max_rel_error.max(rel);
                    report.worst = Some(Coordinate { input: i, index: idx, analytic: a, numeric });
                }
            }
        }
        report.passed = report.max_rel_error < self.tolerance;
        Ok(report)
    }
}

/// Checks every partial of `f` at `inputs` with the default settings.
pub fn grad_check<F>(f: F, inputs: &[Tensor<f64>], tolerance: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    GradCheck::new(tolerance).run(f, inputs)
}
