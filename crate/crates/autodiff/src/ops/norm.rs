//! Softmax, channel normalization and per-channel / per-row scaling.

use crate::ops::shape::split_dims;
use crate::tape::Op;
use crate::{Error, Real, Result, Tape, Tensor, Var};

/// Numerically stable softmax of `x` along `axis`.
pub fn softmax<T: Real>(x: &Tensor<T>, axis: usize) -> Result<Tensor<T>> {
    if axis >= x.rank() {
        return Err(Error::Axis { op: "softmax", axis, rank: x.rank() });
    }
    let (outer, size, inner) = split_dims(x.shape(), axis);
    let src = x.data();
    let mut out = vec![T::zero(); src.len()];
    for o in 0..outer {
        for i in 0..inner {
            let at = |j: usize| (o * size + j) * inner + i;
            let max = (0..size).map(|j| src[at(j)]).fold(T::neg_infinity(), T::max);
            let mut total = T::zero();
            for j in 0..size {
                let e = (src[at(j)] - max).exp();
                out[at(j)] = e;
                total += e;
            }
            for j in 0..size {
                out[at(j)] /= total;
            }
        }
    }
    Ok(Tensor::from_parts(x.shape().to_vec(), out))
}

impl<T: Real> Tape<T> {
    pub fn softmax(&mut self, input: Var, axis: usize) -> Result<Var> {
        let v = softmax(self.value(input), axis)?;
        Ok(self.push(v, Op::Softmax { input, axis }))
    }

    /// Scales every spatial location of an NCHW map to unit channel norm.
    pub fn l2_normalize(&mut self, input: Var) -> Result<Var> {
        let [n, c, h, w] = self.value(input).dims4("l2_normalize")?;
        let eps = T::of(1e-12);
        let x = self.value(input).data();
        let plane = h * w;
        let mut out = vec![T::zero(); x.len()];
        for b in 0..n {
            let base = b * c * plane;
            for p in 0..plane {
                let ss: T = (0..c).map(|ch| x[base + ch * plane + p].powi(2)).sum();
                let r = (ss + eps).sqrt().recip();
                for ch in 0..c {
                    out[base + ch * plane + p] = x[base + ch * plane + p] * r;
                }
            }
        }
        Ok(self.push(Tensor::from_parts(vec![n, c, h, w], out), Op::L2Normalize { input, eps }))
    }

    /// `input[:, c] * scale[c] + bias[c]` for an NCHW map.
    pub fn channel_affine(&mut self, input: Var, scale: Option<Var>, bias: Option<Var>) -> Result<Var> {
        const OP: &str = "channel_affine";
        let [n, c, h, w] = self.value(input).dims4(OP)?;
        for p in scale.iter().chain(bias.iter()) {
            if self.shape(*p) != [c] {
                return Err(Error::shape(OP, format!("parameter {:?} for {c} channels", self.shape(*p))));
            }
        }
        let plane = h * w;
        let mut out = self.value(input).data().to_vec();
        let s = scale.map(|s| self.value(s).data());
        let bv = bias.map(|b| self.value(b).data());
        for (i, chunk) in out.chunks_mut(plane).enumerate() {
            let ch = i % c;
            let (m, a) = (s.map_or(T::one(), |s| s[ch]), bv.map_or(T::zero(), |b| b[ch]));
            chunk.iter_mut().for_each(|v| *v = *v * m + a);
        }
        Ok(self.push(Tensor::from_parts(vec![n, c, h, w], out), Op::ChannelAffine { input, scale, bias }))
    }

    /// Multiplies row `r` of `input: [R,D]` by `factors[r]`, `factors: [R,1]`.
    pub fn scale_rows(&mut self, input: Var, factors: Var) -> Result<Var> {
        let [r, d] = self.value(input).dims2("scale_rows")?;
        if self.shape(factors) != [r, 1] {
            return Err(Error::shape("scale_rows", format!("factors {:?} for {r} rows", self.shape(factors))));
        }
        let f = self.value(factors).data();
        let mut out = self.value(input).data().to_vec();
        for (row, &s) in out.chunks_mut(d).zip(f) {
            row.iter_mut().for_each(|v| *v *= s);
        }
        Ok(self.push(Tensor::from_parts(vec![r, d], out), Op::ScaleRows { input, factors }))
    }
}

pub(crate) fn softmax_backward<T: Real>(y: &Tensor<T>, g: &Tensor<T>, axis: usize) -> Tensor<T> {
    let (outer, size, inner) = split_dims(y.shape(), axis);
    let (yd, gd) = (y.data(), g.data());
    let mut out = vec![T::zero(); yd.len()];
    for o in 0..outer {
        for i in 0..inner {
            let at = |j: usize| (o * size + j) * inner + i;
            let dot: T = (0..size).map(|j| yd[at(j)] * gd[at(j)]).sum();
            for j in 0..size {
                out[at(j)] = yd[at(j)] * (gd[at(j)] - dot);
            }
        }
    }
    Tensor::from_parts(y.shape().to_vec(), out)
}

pub(crate) fn l2_normalize_backward<T: Real>(x: &Tensor<T>, eps: T, g: &Tensor<T>) -> Tensor<T> {
    let [n, c, h, w] = x.dims4("l2_normalize").unwrap();
    let plane = h * w;
    let (xd, gd) = (x.data(), g.data());
    let mut out = vec![T::zero(); xd.len()];
    for b in 0..n {
        let base = b * c * plane;
        for p in 0..plane {
            let idx = |ch: usize| base + ch * plane + p;
            let ss: T = (0..c).map(|ch| xd[idx(ch)].powi(2)).sum();
            let r = (ss + eps).sqrt().recip();
            let xg: T = (0..c).map(|ch| xd[idx(ch)] * gd[idx(ch)]).sum();
            let r3 = r * r * r;
            for ch in 0..c {
                out[idx(ch)] = gd[idx(ch)] * r - xd[idx(ch)] * xg * r3;
            }
        }
    }
    Tensor::from_parts(x.shape().to_vec(), out)
}

type Grads3<T> = (Option<Tensor<T>>, Option<Tensor<T>>, Option<Tensor<T>>);

pub(crate) fn channel_affine_backward<T: Real>(
    x: &Tensor<T>,
    scale: Option<&Tensor<T>>,
    g: &Tensor<T>,
    need: [bool; 3],
) -> Grads3<T> {
    let [_, c, h, w] = x.dims4("channel_affine").unwrap();
    let plane = h * w;
    let dx = need[0].then(|| {
        let mut d = g.data().to_vec();
        if let Some(s) = scale {
            for (i, chunk) in d.chunks_mut(plane).enumerate() {
                let m = s.data()[i % c];
                chunk.iter_mut().for_each(|v| *v *= m);
            }
        }
        Tensor::from_parts(x.shape().to_vec(), d)
    });
    let reduce = |f: &dyn Fn(usize) -> T| {
        let mut acc = vec![T::zero(); c];
        for i in 0..g.len() / plane {
            acc[i % c] += f(i);
        }
        Tensor::from_parts(vec![c], acc)
    };
    let ds = need[1].then(|| {
        reduce(&|i| {
            let gs = &g.data()[i * plane..][..plane];
            let xs = &x.data()[i * plane..][..plane];
            gs.iter().zip(xs).map(|(&a, &b)| a * b).sum()
        })
    });
    let db = need[2].then(|| reduce(&|i| g.data()[i * plane..][..plane].iter().copied().sum()));
    (dx, ds, db)
}

pub(crate) fn scale_rows_backward<T: Real>(
    x: &Tensor<T>,
    f: &Tensor<T>,
    g: &Tensor<T>,
    need: [bool; 2],
) -> (Option<Tensor<T>>, Option<Tensor<T>>) {
    let [r, d] = x.dims2("scale_rows").unwrap();
    let dx = need[0].then(|| {
        let mut out = g.data().to_vec();
        for (row, &s) in out.chunks_mut(d).zip(f.data()) {
            row.iter_mut().for_each(|v| *v *= s);
        }
        Tensor::from_parts(vec![r, d], out)
    });
    let df = need[1].then(|| {
        let out = g
            .data()
            .chunks(d)
            .zip(x.data().chunks(d))
            .map(|(gr, xr)| gr.iter().zip(xr).map(|(&a, &b)| a * b).sum())
            .collect();
        Tensor::from_parts(vec![r, 1], out)
    });
    (dx, df)
}
