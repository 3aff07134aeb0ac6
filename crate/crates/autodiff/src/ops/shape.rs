//! Concatenation, slicing, reshaping and spatial gathers.

use crate::tape::{Op, SpatialAxis};
use crate::{Error, Real, Result, Tape, Tensor, Var};

/// `(outer, axis, inner)` extents of `shape` around `axis`.
pub(crate) fn split_dims(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

impl<T: Real> Tape<T> {
    /// Joins tensors along `axis`; all other dimensions must agree.
    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        const OP: &str = "concat";
        let first = inputs.first().ok_or_else(|| Error::shape(OP, "no inputs"))?;
        let rank = self.shape(*first).len();
        if axis >= rank {
            return Err(Error::Axis { op: OP, axis, rank });
        }
        let mut out_shape = self.shape(*first).to_vec();
        out_shape[axis] = 0;
        for v in inputs {
            let s = self.shape(*v);
            let compatible = s.len() == rank && s.iter().enumerate().all(|(i, &d)| i == axis || d == out_shape[i]);
            if !compatible {
                return Err(Error::shape(
                    OP,
                    format!("{s:?} does not match {:?} outside axis {axis}", self.shape(*first)),
                ));
            }
            out_shape[axis] += s[axis];
        }
        let (outer, _, inner) = split_dims(&out_shape, axis);
        let mut out = Vec::with_capacity(out_shape.iter().product());
        for o in 0..outer {
            for v in inputs {
                let t = self.value(*v);
                let chunk = t.shape()[axis] * inner;
                out.extend_from_slice(&t.data()[o * chunk..][..chunk]);
            }
        }
        Ok(self.push(Tensor::from_parts(out_shape, out), Op::Concat { inputs: inputs.to_vec(), axis }))
    }

    /// `len` entries of `axis` starting at `start`.
    pub fn slice(&mut self, input: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        const OP: &str = "slice";
        let shape = self.shape(input).to_vec();
        if axis >= shape.len() {
            return Err(Error::Axis { op: OP, axis, rank: shape.len() });
        }
        if len == 0 || start + len > shape[axis] {
            return Err(Error::shape(OP, format!("range {start}..{} outside axis of size {}", start + len, shape[axis])));
        }
        let (outer, size, inner) = split_dims(&shape, axis);
        let src = self.value(input).data();
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            out.extend_from_slice(&src[(o * size + start) * inner..][..len * inner]);
        }
        let mut out_shape = shape;
        out_shape[axis] = len;
        Ok(self.push(Tensor::from_parts(out_shape, out), Op::Slice { input, axis, start }))
    }

    /// Splits `axis` into consecutive pieces of the given sizes.
    pub fn split(&mut self, input: Var, axis: usize, sizes: &[usize]) -> Result<Vec<Var>> {
        let total: usize = sizes.iter().sum();
        let rank = self.shape(input).len();
        if axis >= rank {
            return Err(Error::Axis { op: "split", axis, rank });
        }
        if total != self.shape(input)[axis] {
            return Err(Error::shape("split", format!("sizes {sizes:?} do not cover axis of {}", self.shape(input)[axis])));
        }
        let mut start = 0;
        sizes
            .iter()
            .map(|&len| {
                let v = self.slice(input, axis, start, len);
                start += len;
                v
            })
            .collect()
    }

    pub fn reshape(&mut self, input: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(input).clone().reshape(shape.to_vec())?;
        Ok(self.push(value, Op::Reshape(input)))
    }

    /// Rows of per-location channel vectors read `shift` cells back along `axis`.
    ///
    /// `input: [N,C,H,W]` -> `[N*H*W, C]`, row `(n*H + y)*W + x` holding
    /// `input[n, :, y - shift, x]` (height) or `input[n, :, y, x - shift]`
    /// (width); positions that fall off the map are zero.
    pub fn gather_shifted(&mut self, input: Var, shift: usize, axis: SpatialAxis) -> Result<Var> {
        let [n, c, h, w] = self.value(input).dims4("gather_shifted")?;
        let src = self.value(input).data();
        let mut out = vec![T::zero(); n * h * w * c];
        for b in 0..n {
            for y in 0..h {
                for x in 0..w {
                    let (sy, sx) = match axis {
                        SpatialAxis::Height if y >= shift => (y - shift, x),
                        SpatialAxis::Width if x >= shift => (y, x - shift),
                        _ => continue,
                    };
                    let row = &mut out[((b * h + y) * w + x) * c..][..c];
                    for (ch, r) in row.iter_mut().enumerate() {
                        *r = src[((b * c + ch) * h + sy) * w + sx];
                    }
                }
            }
        }
        Ok(self.push(Tensor::from_parts(vec![n * h * w, c], out), Op::GatherShifted { input, shift, axis }))
    }

    /// NCHW map flattened to `[N*H*W, C]` rows.
    pub fn nchw_to_rows(&mut self, input: Var) -> Result<Var> {
        self.gather_shifted(input, 0, SpatialAxis::Height)
    }

    /// Sum of all elements, as a `[1]` tensor.
    pub fn sum(&mut self, input: Var) -> Var {
        let s = self.value(input).sum();
        self.push(Tensor::scalar(s), Op::Sum(input))
    }

    /// `sum(input * weights)` for a constant `weights` of the same shape.
    pub fn weighted_sum(&mut self, input: Var, weights: Tensor<T>) -> Result<Var> {
        if weights.shape() != self.shape(input) {
            return Err(Error::shape("weighted_sum", format!("{:?} vs {:?}", weights.shape(), self.shape(input))));
        }
        let s = self.value(input).data().iter().zip(weights.data()).map(|(&a, &b)| a * b).sum();
        Ok(self.push(Tensor::scalar(s), Op::WeightedSum { input, weights }))
    }
}

pub(crate) fn concat_backward<T: Real>(shapes: &[&[usize]], axis: usize, g: &Tensor<T>) -> Vec<Tensor<T>> {
    let (outer, total, inner) = split_dims(g.shape(), axis);
    let mut parts: Vec<Vec<T>> = shapes.iter().map(|s| Vec::with_capacity(s.iter().product())).collect();
    for o in 0..outer {
        let mut offset = 0;
        for (part, s) in parts.iter_mut().zip(shapes) {
            let chunk = s[axis] * inner;
            part.extend_from_slice(&g.data()[(o * total) * inner + offset..][..chunk]);
            offset += chunk;
        }
    }
    parts.into_iter().zip(shapes).map(|(p, s)| Tensor::from_parts(s.to_vec(), p)).collect()
}

pub(crate) fn slice_backward<T: Real>(input_shape: &[usize], axis: usize, start: usize, g: &Tensor<T>) -> Tensor<T> {
    let (outer, size, inner) = split_dims(input_shape, axis);
    let len = g.shape()[axis];
    let mut out = vec![T::zero(); input_shape.iter().product()];
    for o in 0..outer {
        out[(o * size + start) * inner..][..len * inner].copy_from_slice(&g.data()[o * len * inner..][..len * inner]);
    }
    Tensor::from_parts(input_shape.to_vec(), out)
}

pub(crate) fn gather_shifted_backward<T: Real>(input_shape: &[usize], shift: usize, axis: SpatialAxis, g: &Tensor<T>) -> Tensor<T> {
    let [n, c, h, w] = [input_shape[0], input_shape[1], input_shape[2], input_shape[3]];
    let gd = g.data();
    let mut out = vec![T::zero(); n * c * h * w];
    for b in 0..n {
        for y in 0..h {
            for x in 0..w {
                let (sy, sx) = match axis {
                    SpatialAxis::Height if y >= shift => (y - shift, x),
                    SpatialAxis::Width if x >= shift => (y, x - shift),
                    _ => continue,
                };
                let row = &gd[((b * h + y) * w + x) * c..][..c];
                for (ch, &v) in row.iter().enumerate() {
                    out[((b * c + ch) * h + sy) * w + sx] += v;
                }
            }
        }
    }
    Tensor::from_parts(input_shape.to_vec(), out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn channel_concat_of_two_512_maps() {
        let mut tape = Tape::<f32>::new();
        let a = tape.constant(Tensor::zeros([1, 512, 10, 10]));
        let b = tape.constant(Tensor::zeros([1, 512, 10, 10]));
        let c = tape.concat(&[a, b], 1).unwrap();
        assert_eq!(tape.shape(c), [1, 1024, 10, 10]);
    }

    #[test]
    fn concat_axis_out_of_range() {
        let mut tape = Tape::<f32>::new();
        let a = tape.constant(Tensor::zeros([2, 2]));
        assert!(matches!(tape.concat(&[a, a], 2), Err(Error::Axis { .. })));
        assert!(matches!(tape.slice(a, 3, 0, 1), Err(Error::Axis { .. })));
    }

    #[test]
    fn gather_shifted_zero_fills_boundary() {
        let mut tape = Tape::<f64>::new();
        // [1, 2, 3, 3], value = 10*c + 3*y + x
        let m = tape.constant(Tensor::from_fn([1, 2, 3, 3], |i| {
            let (c, y, x) = (i / 9, (i / 3) % 3, i % 3);
            (10 * c + 3 * y + x) as f64
        }));
        let up = tape.gather_shifted(m, 1, SpatialAxis::Height).unwrap();
        let v = tape.value(up);
        assert_eq!(v.shape(), [9, 2]);
        // location (y=0, x=2) has nothing above it
        assert_eq!(&v.data()[2 * 2..2 * 2 + 2], &[0.0, 0.0]);
        // location (y=2, x=1) reads (y=1, x=1)
        let row = 2 * 3 + 1;
        assert_eq!(&v.data()[row * 2..row * 2 + 2], &[4.0, 14.0]);
    }
}
