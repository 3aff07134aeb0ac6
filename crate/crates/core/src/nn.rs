//! Parameters and reusable layers: plain conv block, depthwise-separable block,
//! LSTM cell and additive attention cell.

use rand::Rng;
use vssa_autodiff::{Padding, Real, Tape, Tensor, Var};

use crate::{Error, Result};

/// Index of a parameter inside a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    /// Position in insertion order.
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
pub struct Param<T: Real> {
    pub name: String,
    pub value: Tensor<T>,
    /// Weight decay applies to weights only, never to biases or scales.
    pub decay: bool,
}

/// Named, ordered collection of model parameters.
#[derive(Debug, Clone, Default)]
pub struct ParamStore<T: Real> {
    params: Vec<Param<T>>,
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore { params: Vec::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<T>, decay: bool) -> ParamId {
        let name = name.into();
        debug_assert!(self.find(&name).is_none(), "duplicate parameter {name}");
        self.params.push(Param { name, value, decay });
        ParamId(self.params.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Param<T> {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param<T> {
        &mut self.params[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param<T>> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param<T>> {
        self.params.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn numel(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Records every parameter on `tape`, differentiable when `trainable`.
    pub fn bind(&self, tape: &mut Tape<T>, trainable: bool) -> Bound {
        let vars = self
            .params
            .iter()
            .map(|p| if trainable { tape.variable(p.value.clone()) } else { tape.constant(p.value.clone()) })
            .collect();
        Bound { vars }
    }

    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore {
            params: self
                .params
                .iter()
                .map(|p| Param { name: p.name.clone(), value: p.value.cast(), decay: p.decay })
                .collect(),
        }
    }
}

/// Parameters of a [`ParamStore`] as tape variables.
#[derive(Debug, Clone)]
pub struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    /// Wraps tape variables that stand for a store's parameters, in store order.
    pub fn from_vars(vars: Vec<Var>) -> Self {
        Bound { vars }
    }

    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}

/// Uniform Glorot initialization, `U(-sqrt(6/(fan_in+fan_out)), +sqrt(..))`.
pub fn glorot_uniform<T: Real, R: Rng + ?Sized>(shape: &[usize], fan_in: usize, fan_out: usize, rng: &mut R) -> Tensor<T> {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Tensor::uniform(shape.to_vec(), -bound, bound, rng)
}

/// Second moment of a Glorot-uniform weight.
fn glorot_variance(fan_in: usize, fan_out: usize) -> f64 {
    2.0 / (fan_in + fan_out) as f64
}

/// Channel-scale initial value that keeps the second moment of activations
/// constant through linear stages with the given `(fan_in, variance)` and a ReLU.
fn relu_gain(stages: &[(usize, f64)]) -> f64 {
    let growth: f64 = stages.iter().map(|&(fan_in, var)| fan_in as f64 * var).product();
    (2.0 / growth).sqrt()
}

/// Channel count after applying a width multiplier, floored at 8.
pub fn scaled_channels(base: usize, width: f64) -> usize {
    ((base as f64 * width).round() as usize).max(8)
}

/// Full convolution followed by per-channel scale/bias and ReLU.
#[derive(Debug, Clone)]
pub struct ConvBlock {
    pub weight: ParamId,
    pub scale: ParamId,
    pub bias: ParamId,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
}

impl ConvBlock {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        rng: &mut R,
    ) -> Self {
        let (fan_in, fan_out) = (in_channels * kernel * kernel, out_channels * kernel * kernel);
        let gain = relu_gain(&[(fan_in, glorot_variance(fan_in, fan_out))]);
        ConvBlock {
            weight: store.add(
                format!("{name}/weight"),
                glorot_uniform(&[out_channels, in_channels, kernel, kernel], fan_in, fan_out, rng),
                true,
            ),
            scale: store.add(format!("{name}/scale"), Tensor::full([out_channels], T::of(gain)), false),
            bias: store.add(format!("{name}/bias"), Tensor::zeros([out_channels]), false),
            in_channels,
            out_channels,
            kernel,
            stride,
        }
    }

    pub fn forward<T: Real>(&self, tape: &mut Tape<T>, p: &Bound, x: Var) -> Result<Var> {
        let y = tape.conv2d(x, p.var(self.weight), None, self.stride, Padding::Same)?;
        let y = tape.channel_affine(y, Some(p.var(self.scale)), Some(p.var(self.bias)))?;
        Ok(tape.relu(y))
    }
}

/// Depthwise 3x3 (with stride) then pointwise 1x1, per-channel scale/bias, ReLU.
#[derive(Debug, Clone)]
pub struct SeparableBlock {
    pub depthwise: ParamId,
    pub pointwise: ParamId,
    pub scale: ParamId,
    pub bias: ParamId,
    pub in_channels: usize,
    pub out_channels: usize,
    pub stride: usize,
}

impl SeparableBlock {
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        stride: usize,
        rng: &mut R,
    ) -> Self {
        let gain = relu_gain(&[
            (9, glorot_variance(9, 9)),
            (in_channels, glorot_variance(in_channels, out_channels)),
        ]);
        SeparableBlock {
            depthwise: store.add(format!("{name}/depthwise"), glorot_uniform(&[in_channels, 1, 3, 3], 9, 9, rng), true),
            pointwise: store.add(
                format!("{name}/pointwise"),
                glorot_uniform(&[out_channels, in_channels, 1, 1], in_channels, out_channels, rng),
                true,
            ),
            scale: store.add(format!("{name}/scale"), Tensor::full([out_channels], T::of(gain)), false),
            bias: store.add(format!("{name}/bias"), Tensor::zeros([out_channels]), false),
            in_channels,
            out_channels,
            stride,
        }
    }

    pub fn forward<T: Real>(&self, tape: &mut Tape<T>, p: &Bound, x: Var) -> Result<Var> {
        let c = tape.shape(x).get(1).copied().unwrap_or(0);
        if c != self.in_channels {
            return Err(Error::Config(format!(
                "separable block expects {} input channels, got {c}",
                self.in_channels
            )));
        }
        let y = tape.depthwise_conv2d(x, p.var(self.depthwise), self.stride, Padding::Same)?;
        let y = tape.conv2d(y, p.var(self.pointwise), None, 1, Padding::Same)?;
        let y = tape.channel_affine(y, Some(p.var(self.scale)), Some(p.var(self.bias)))?;
        Ok(tape.relu(y))
    }
}

/// LSTM cell over a batch of rows. Gate order in the stacked weights is
/// (input, forget, cell, output); the forget-gate bias starts at 1.
#[derive(Debug, Clone)]
pub struct LstmCell {
    /// `[4H, D]`
    pub w_x: ParamId,
    /// `[4H, H]`
    pub w_h: ParamId,
    /// `[4H]`
    pub bias: ParamId,
    pub input_size: usize,
    pub hidden: usize,
}

impl LstmCell {
    pub fn new<T: Real, R: Rng + ?Sized>(store: &mut ParamStore<T>, name: &str, input_size: usize, hidden: usize, rng: &mut R) -> Self {
        let mut bias = Tensor::zeros([4 * hidden]);
        bias.data_mut()[hidden..2 * hidden].fill(T::one());
        LstmCell {
            w_x: store.add(format!("{name}/w_x"), glorot_uniform(&[4 * hidden, input_size], input_size, 4 * hidden, rng), true),
            w_h: store.add(format!("{name}/w_h"), glorot_uniform(&[4 * hidden, hidden], hidden, 4 * hidden, rng), true),
            bias: store.add(format!("{name}/bias"), bias, false),
            input_size,
            hidden,
        }
    }

    /// One step: `(h_prev [R,H], c_prev [R,H], v [R,D]) -> (h [R,H], c [R,H])`.
    pub fn step<T: Real>(&self, tape: &mut Tape<T>, p: &Bound, h_prev: Var, c_prev: Var, v: Var) -> Result<(Var, Var)> {
        let zx = tape.linear(v, p.var(self.w_x), Some(p.var(self.bias)))?;
        let zh = tape.linear(h_prev, p.var(self.w_h), None)?;
        let z = tape.add(zx, zh)?;
        let gates = tape.split(z, 1, &[self.hidden; 4])?;
        let i = tape.sigmoid(gates[0]);
        let f = tape.sigmoid(gates[1]);
        let g = tape.tanh(gates[2]);
        let o = tape.sigmoid(gates[3]);
        let keep = tape.mul(f, c_prev)?;
        let write = tape.mul(i, g)?;
        let c = tape.add(keep, write)?;
        let squashed = tape.tanh(c);
        let h = tape.mul(o, squashed)?;
        Ok((h, c))
    }
}

/// Additive attention: `p_i = v . tanh(W_h h_i + W_d dh)`, `a = softmax(p)`.
#[derive(Debug, Clone)]
pub struct AttentionCell {
    /// `[A, H]`
    pub w_h: ParamId,
    /// `[A, H]`
    pub w_d: ParamId,
    /// `[1, A]`
    pub v: ParamId,
    pub width: usize,
}

impl AttentionCell {
    pub fn new<T: Real, R: Rng + ?Sized>(store: &mut ParamStore<T>, name: &str, hidden: usize, width: usize, rng: &mut R) -> Self {
        AttentionCell {
            w_h: store.add(format!("{name}/w_h"), glorot_uniform(&[width, hidden], hidden, width, rng), true),
            w_d: store.add(format!("{name}/w_d"), glorot_uniform(&[width, hidden], hidden, width, rng), true),
            v: store.add(format!("{name}/v"), glorot_uniform(&[1, width], width, 1, rng), true),
            width,
        }
    }

    /// `W_h h_i` for every encoder state; reused across decode steps.
    pub fn project_states<T: Real>(&self, tape: &mut Tape<T>, p: &Bound, states: &[Var]) -> Result<Vec<Var>> {
        states.iter().map(|&h| Ok(tape.linear(h, p.var(self.w_h), None)?)).collect()
    }

    /// Attention weights `[R, T]` over the projected encoder states.
    pub fn weights<T: Real>(&self, tape: &mut Tape<T>, p: &Bound, projected: &[Var], dh: Var) -> Result<Var> {
        if projected.is_empty() {
            return Err(Error::Config("attention over an empty state list".into()));
        }
        let query = tape.linear(dh, p.var(self.w_d), None)?;
        let mut scores = Vec::with_capacity(projected.len());
        for &k in projected {
            let e = tape.add(k, query)?;
            let e = tape.tanh(e);
            scores.push(tape.linear(e, p.var(self.v), None)?);
        }
        let scores = tape.concat(&scores, 1)?;
        Ok(tape.softmax(scores, 1)?)
    }

    /// Attention weights for raw encoder states.
    pub fn scores<T: Real>(&self, tape: &mut Tape<T>, p: &Bound, states: &[Var], dh: Var) -> Result<Var> {
        let projected = self.project_states(tape, p, states)?;
        self.weights(tape, p, &projected, dh)
    }

    /// `sum_i a_i h_i` for weights `[R, T]` and states `[R, H]`.
    pub fn attend<T: Real>(tape: &mut Tape<T>, weights: Var, states: &[Var]) -> Result<Var> {
        let mut acc: Option<Var> = None;
        for (i, &h) in states.iter().enumerate() {
            let a = tape.slice(weights, 1, i, 1)?;
            let term = tape.scale_rows(h, a)?;
            acc = Some(match acc {
                Some(prev) => tape.add(prev, term)?,
                None => term,
            });
        }
        acc.ok_or_else(|| Error::Config("attention over an empty state list".into()))
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    #[test]
    fn glorot_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let t: Tensor<f64> = glorot_uniform(&[64, 32], 32, 64, &mut rng);
        let bound = (6.0f64 / 96.0).sqrt();
        assert!(t.data().iter().all(|v| v.abs() <= bound));
        assert!(t.data().iter().any(|v| v.abs() > 0.9 * bound));
    }

    #[test]
    fn width_multiplier_floor() {
        assert_eq!(scaled_channels(32, 0.125), 8);
        assert_eq!(scaled_channels(512, 0.125), 64);
        assert_eq!(scaled_channels(1024, 1.0), 1024);
    }

    #[test]
    fn forget_bias_starts_at_one() {
        let mut store = ParamStore::<f64>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let cell = LstmCell::new(&mut store, "lstm", 3, 2, &mut rng);
        assert_eq!(store.get(cell.bias).value.data(), &[0.0, 0.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn separable_channel_mismatch() {
        let mut store = ParamStore::<f64>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let block = SeparableBlock::new(&mut store, "b", 4, 8, 1, &mut rng);
        let mut tape = Tape::new();
        let p = store.bind(&mut tape, false);
        let x = tape.constant(Tensor::zeros([1, 3, 4, 4]));
        assert!(block.forward(&mut tape, &p, x).is_err());
    }
}
