//! Reverse-mode differentiation tape.
//!
//! Every op appends one node holding its forward value. Node ids are assigned
//! in insertion order, so insertion order is a topological order and the
//! backward sweep simply walks the ids downward.

use crate::ops::{basic, conv, norm, shape};
use crate::{Error, Real, Result, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

/// An op whose forward value is computed outside the tape and whose backward
/// is supplied by the caller.
pub trait CustomOp<T: Real>: Send + Sync {
    fn name(&self) -> &'static str;

    /// Gradient for each input, in the order the inputs were recorded.
    /// `None` means the input receives no gradient.
    fn backward(
        &self,
        inputs: &[&Tensor<T>],
        output: &Tensor<T>,
        grad_output: &Tensor<T>,
    ) -> Vec<Option<Tensor<T>>>;
}

/// Spatial axis of an NCHW map.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SpatialAxis {
    Height,
    Width,
}

pub(crate) enum Op<T: Real> {
    Leaf,
    Conv2d { input: Var, weight: Var, bias: Option<Var>, geom: conv::ConvGeom },
    Depthwise { input: Var, weight: Var, geom: conv::ConvGeom },
    ConvTranspose { input: Var, weight: Var, bias: Option<Var>, geom: conv::ConvGeom },
    Linear { input: Var, weight: Var, bias: Option<Var> },
    MatMul { lhs: Var, rhs: Var },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    Relu(Var),
    Sigmoid(Var),
    Tanh(Var),
    Softmax { input: Var, axis: usize },
    Concat { inputs: Vec<Var>, axis: usize },
    Slice { input: Var, axis: usize, start: usize },
    Reshape(Var),
    L2Normalize { input: Var, eps: T },
    ChannelAffine { input: Var, scale: Option<Var>, bias: Option<Var> },
    ScaleRows { input: Var, factors: Var },
    GatherShifted { input: Var, shift: usize, axis: SpatialAxis },
    Sum(Var),
    WeightedSum { input: Var, weights: Tensor<T> },
    Custom { inputs: Vec<Var>, op: Box<dyn CustomOp<T>> },
}

impl<T: Real> Op<T> {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Conv2d { .. } => "conv2d",
            Op::Depthwise { .. } => "depthwise_conv2d",
            Op::ConvTranspose { .. } => "transposed_conv2d",
            Op::Linear { .. } => "linear",
            Op::MatMul { .. } => "matmul",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::Relu(_) => "relu",
            Op::Sigmoid(_) => "sigmoid",
            Op::Tanh(_) => "tanh",
            Op::Softmax { .. } => "softmax",
            Op::Concat { .. } => "concat",
            Op::Slice { .. } => "slice",
            Op::Reshape(_) => "reshape",
            Op::L2Normalize { .. } => "l2_normalize",
            Op::ChannelAffine { .. } => "channel_affine",
            Op::ScaleRows { .. } => "scale_rows",
            Op::GatherShifted { .. } => "gather_shifted",
            Op::Sum(_) => "sum",
            Op::WeightedSum { .. } => "weighted_sum",
            Op::Custom { op, .. } => op.name(),
        }
    }

    fn inputs(&self) -> Vec<Var> {
        let opt = |v: &Option<Var>| v.iter().copied().collect::<Vec<_>>();
        match self {
            Op::Leaf => vec![],
            Op::Conv2d { input, weight, bias, .. } | Op::ConvTranspose { input, weight, bias, .. } => {
                [vec![*input, *weight], opt(bias)].concat()
            }
            Op::Depthwise { input, weight, .. } => vec![*input, *weight],
            Op::Linear { input, weight, bias } => [vec![*input, *weight], opt(bias)].concat(),
            Op::MatMul { lhs, rhs } => vec![*lhs, *rhs],
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) => vec![*a, *b],
            Op::Scale(a, _)
            | Op::Relu(a)
            | Op::Sigmoid(a)
            | Op::Tanh(a)
            | Op::Reshape(a)
            | Op::Sum(a) => vec![*a],
            Op::Softmax { input, .. }
            | Op::Slice { input, .. }
            | Op::L2Normalize { input, .. }
            | Op::GatherShifted { input, .. }
            | Op::WeightedSum { input, .. } => vec![*input],
            Op::Concat { inputs, .. } | Op::Custom { inputs, .. } => inputs.clone(),
            Op::ChannelAffine { input, scale, bias } => [vec![*input], opt(scale), opt(bias)].concat(),
            Op::ScaleRows { input, factors } => vec![*input, *factors],
        }
    }
}

struct Node<T: Real> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
    finite: bool,
}

/// Append-only record of a forward computation.
pub struct Tape<T: Real> {
    nodes: Vec<Node<T>>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records a constant input (no gradient is accumulated for it).
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push_leaf(value, false)
    }

    /// Records a differentiable input.
    pub fn variable(&mut self, value: Tensor<T>) -> Var {
        self.push_leaf(value, true)
    }

    fn push_leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        let finite = value.all_finite();
        self.nodes.push(Node { value, op: Op::Leaf, requires_grad, finite });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Name of the op that produced `v`.
    pub fn op_name(&self, v: Var) -> &'static str {
        self.nodes[v.0].op.name()
    }

    pub(crate) fn push(&mut self, value: Tensor<T>, op: Op<T>) -> Var {
        let inputs = op.inputs();
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        let inputs_finite = inputs.iter().all(|v| self.nodes[v.0].finite);
        let finite = value.all_finite();
        if cfg!(debug_assertions) && inputs_finite && !finite {
            let (i, x) = value.first_non_finite().unwrap();
            panic!("{} produced non-finite value {x} at flat index {i} from finite inputs", op.name());
        }
        self.nodes.push(Node { value, op, requires_grad, finite });
        Var(self.nodes.len() - 1)
    }

    /// Records an op whose forward value was computed by the caller.
    pub fn custom(&mut self, inputs: &[Var], value: Tensor<T>, op: Box<dyn CustomOp<T>>) -> Var {
        self.push(value, Op::Custom { inputs: inputs.to_vec(), op })
    }

    /// Back-propagates from a single-element output.
    pub fn backward(&self, output: Var) -> Result<Gradients<T>> {
        let out = &self.nodes[output.0].value;
        if out.len() != 1 {
            return Err(Error::NonScalarLoss(out.shape().to_vec()));
        }
        self.backward_with(output, Tensor::full(out.shape().to_vec(), T::one()))
    }

    /// Back-propagates an arbitrary upstream gradient for `output`.
    pub fn backward_with(&self, output: Var, seed: Tensor<T>) -> Result<Gradients<T>> {
        if seed.shape() != self.shape(output) {
            return Err(Error::shape(
                "backward",
                format!("seed {:?} vs output {:?}", seed.shape(), self.shape(output)),
            ));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[output.0] = Some(seed);
        for id in (0..=output.0).rev() {
            let node = &self.nodes[id];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let (lower, upper) = grads.split_at_mut(id);
            let Some(g) = upper[0].as_ref() else { continue };
            for (var, grad) in self.node_backward(node, g) {
                debug_assert_eq!(grad.shape(), self.shape(var), "{} gradient shape", node.op.name());
                match &mut lower[var.0] {
                    Some(acc) => acc.add_assign(&grad),
                    slot => *slot = Some(grad),
                }
            }
        }
        Ok(Gradients { grads })
    }

    fn need(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn node_backward(&self, node: &Node<T>, g: &Tensor<T>) -> Vec<(Var, Tensor<T>)> {
        let val = |v: Var| &self.nodes[v.0].value;
        let mut out = Vec::new();
        let mut emit = |v: Var, t: Option<Tensor<T>>| {
            if let Some(t) = t {
                out.push((v, t));
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d { input, weight, bias, geom } => {
                let (dx, dw, db) = conv::conv2d_backward(
                    val(*input),
                    val(*weight),
                    geom,
                    g,
                    [self.need(*input), self.need(*weight), bias.is_some_and(|b| self.need(b))],
                );
                emit(*input, dx);
                emit(*weight, dw);
                if let Some(b) = bias {
                    emit(*b, db);
                }
            }
            Op::Depthwise { input, weight, geom } => {
                let (dx, dw) = conv::depthwise_backward(
                    val(*input),
                    val(*weight),
                    geom,
                    g,
                    [self.need(*input), self.need(*weight)],
                );
                emit(*input, dx);
                emit(*weight, dw);
            }
            Op::ConvTranspose { input, weight, bias, geom } => {
                let (dx, dw, db) = conv::conv_transpose_backward(
                    val(*input),
                    val(*weight),
                    geom,
                    g,
                    [self.need(*input), self.need(*weight), bias.is_some_and(|b| self.need(b))],
                );
                emit(*input, dx);
                emit(*weight, dw);
                if let Some(b) = bias {
                    emit(*b, db);
                }
            }
            Op::Linear { input, weight, bias } => {
                let (dx, dw, db) = basic::linear_backward(
                    val(*input),
                    val(*weight),
                    g,
                    [self.need(*input), self.need(*weight), bias.is_some_and(|b| self.need(b))],
                );
                emit(*input, dx);
                emit(*weight, dw);
                if let Some(b) = bias {
                    emit(*b, db);
                }
            }
            Op::MatMul { lhs, rhs } => {
                let (da, db) = basic::matmul_backward(val(*lhs), val(*rhs), g, [self.need(*lhs), self.need(*rhs)]);
                emit(*lhs, da);
                emit(*rhs, db);
            }
            Op::Add(a, b) => {
                emit(*a, self.need(*a).then(|| g.clone()));
                emit(*b, self.need(*b).then(|| g.clone()));
            }
            Op::Sub(a, b) => {
                emit(*a, self.need(*a).then(|| g.clone()));
                emit(*b, self.need(*b).then(|| g.map(|v| -v)));
            }
            Op::Mul(a, b) => {
                emit(*a, self.need(*a).then(|| basic::zip(g, val(*b), |g, y| g * y)));
                emit(*b, self.need(*b).then(|| basic::zip(g, val(*a), |g, x| g * x)));
            }
            Op::Scale(a, c) => {
                let c = *c;
                emit(*a, Some(g.map(|v| v * c)));
            }
            Op::Relu(a) => {
                emit(*a, Some(basic::zip(g, &node.value, |g, y| if y > T::zero() { g } else { T::zero() })));
            }
            Op::Sigmoid(a) => {
                emit(*a, Some(basic::zip(g, &node.value, |g, y| g * y * (T::one() - y))));
            }
            Op::Tanh(a) => {
                emit(*a, Some(basic::zip(g, &node.value, |g, y| g * (T::one() - y * y))));
            }
            Op::Softmax { input, axis } => {
                emit(*input, Some(norm::softmax_backward(&node.value, g, *axis)));
            }
            Op::Concat { inputs, axis } => {
                let shapes: Vec<&[usize]> = inputs.iter().map(|v| self.shape(*v)).collect();
                for (v, part) in inputs.iter().zip(shape::concat_backward(&shapes, *axis, g)) {
                    if self.need(*v) {
                        emit(*v, Some(part));
                    }
                }
            }
            Op::Slice { input, axis, start } => {
                emit(*input, Some(shape::slice_backward(self.shape(*input), *axis, *start, g)));
            }
            Op::Reshape(a) => {
                emit(*a, Some(Tensor::from_parts(self.shape(*a).to_vec(), g.data().to_vec())));
            }
            Op::L2Normalize { input, eps } => {
                emit(*input, Some(norm::l2_normalize_backward(val(*input), *eps, g)));
            }
            Op::ChannelAffine { input, scale, bias } => {
                let (dx, ds, db) = norm::channel_affine_backward(
                    val(*input),
                    scale.map(|s| val(s)),
                    g,
                    [
                        self.need(*input),
                        scale.is_some_and(|s| self.need(s)),
                        bias.is_some_and(|b| self.need(b)),
                    ],
                );
                emit(*input, dx);
                if let Some(s) = scale {
                    emit(*s, ds);
                }
                if let Some(b) = bias {
                    emit(*b, db);
                }
            }
            Op::ScaleRows { input, factors } => {
                let (dx, df) = norm::scale_rows_backward(
                    val(*input),
                    val(*factors),
                    g,
                    [self.need(*input), self.need(*factors)],
                );
                emit(*input, dx);
                emit(*factors, df);
            }
            Op::GatherShifted { input, shift, axis } => {
                emit(*input, Some(shape::gather_shifted_backward(self.shape(*input), *shift, *axis, g)));
            }
            Op::Sum(a) => {
                let s = g.data()[0];
                emit(*a, Some(Tensor::full(self.shape(*a).to_vec(), s)));
            }
            Op::WeightedSum { input, weights } => {
                let s = g.data()[0];
                emit(*input, Some(weights.map(|w| w * s)));
            }
            Op::Custom { inputs, op } => {
                let ins: Vec<&Tensor<T>> = inputs.iter().map(|v| val(*v)).collect();
                let grads = op.backward(&ins, &node.value, g);
                for (v, gv) in inputs.iter().zip(grads) {
                    if self.need(*v) {
                        emit(*v, gv);
                    }
                }
            }
        }
        out
    }
}

/// Gradients produced by one backward sweep, indexed by [`Var`].
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient of `v`, or zeros of `shape` when nothing flowed into it.
    pub fn get_or_zeros(&self, v: Var, shape: &[usize]) -> Tensor<T> {
        self.get(v).cloned().unwrap_or_else(|| Tensor::zeros(shape.to_vec()))
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}
