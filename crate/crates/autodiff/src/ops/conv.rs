//! Convolution family: dense, depthwise and transposed.
//!
//! Dense and transposed convolutions go through im2col + gemm. A transposed
//! convolution is the adjoint of a dense convolution with the same geometry,
//! so both share one `ConvGeom` describing the dense direction
//! (`image` side -> `positions` side).

use rayon::prelude::*;

use crate::tape::Op;
use crate::{Error, Real, Result, Tape, Tensor, Var};

/// Padding rule for forward convolutions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Padding {
    /// Output size `ceil(in / stride)`; any odd padding goes to the bottom/right.
    Same,
    Valid,
    Explicit(usize),
}

/// Geometry of a dense convolution from an `in_h x in_w` image to an
/// `out_h x out_w` grid of kernel positions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub kernel: usize,
    pub stride: usize,
    pub pad_top: usize,
    pub pad_left: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub out_h: usize,
    pub out_w: usize,
}

fn out_size(op: &'static str, input: usize, kernel: usize, stride: usize, padding: Padding) -> Result<(usize, usize)> {
    match padding {
        Padding::Same => {
            let out = input.div_ceil(stride);
            let total = ((out - 1) * stride + kernel).saturating_sub(input);
            Ok((out, total / 2))
        }
        Padding::Valid | Padding::Explicit(_) => {
            let pad = if let Padding::Explicit(p) = padding { p } else { 0 };
            if input + 2 * pad < kernel {
                return Err(Error::shape(op, format!("kernel {kernel} larger than padded input {}", input + 2 * pad)));
            }
            Ok(((input + 2 * pad - kernel) / stride + 1, pad))
        }
    }
}

impl ConvGeom {
    pub fn forward(op: &'static str, in_h: usize, in_w: usize, kernel: usize, stride: usize, padding: Padding) -> Result<Self> {
        if kernel == 0 || stride == 0 {
            return Err(Error::Config(format!("{op}: kernel and stride must be >= 1 (got {kernel}, {stride})")));
        }
        let (out_h, pad_top) = out_size(op, in_h, kernel, stride, padding)?;
        let (out_w, pad_left) = out_size(op, in_w, kernel, stride, padding)?;
        Ok(ConvGeom { kernel, stride, pad_top, pad_left, in_h, in_w, out_h, out_w })
    }

    fn positions(&self) -> usize {
        self.out_h * self.out_w
    }

    fn is_pointwise(&self) -> bool {
        self.kernel == 1 && self.stride == 1 && self.pad_top == 0 && self.pad_left == 0
    }
}

/// Output-padding values that make a transposed convolution with `pad` hit `target`.
fn transposed_extent(input: usize, kernel: usize, stride: usize, pad: usize) -> Option<usize> {
    ((input - 1) * stride + kernel).checked_sub(2 * pad)
}

/// Sizes reachable by a stride/kernel/pad transposed convolution with output padding 0 or 1.
pub fn transposed_reachable(input: usize, kernel: usize, stride: usize, pad: usize) -> Vec<usize> {
    match transposed_extent(input, kernel, stride, pad) {
        Some(base) if base > 0 => vec![base, base + 1],
        Some(_) => vec![1],
        None => vec![],
    }
}

/// `[C, k*k, positions]` patch matrix of one `[C, in_h, in_w]` image.
fn im2col<T: Real>(src: &[T], channels: usize, g: &ConvGeom) -> Vec<T> {
    let k = g.kernel;
    let p = g.positions();
    let mut cols = vec![T::zero(); channels * k * k * p];
    for c in 0..channels {
        let plane = &src[c * g.in_h * g.in_w..(c + 1) * g.in_h * g.in_w];
        for ki in 0..k {
            for kj in 0..k {
                let row = &mut cols[((c * k + ki) * k + kj) * p..][..p];
                for oy in 0..g.out_h {
                    let iy = (oy * g.stride + ki) as isize - g.pad_top as isize;
                    if iy < 0 || iy >= g.in_h as isize {
                        continue;
                    }
                    let src_row = &plane[iy as usize * g.in_w..][..g.in_w];
                    let dst = &mut row[oy * g.out_w..][..g.out_w];
                    for (ox, d) in dst.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kj) as isize - g.pad_left as isize;
                        if ix >= 0 && ix < g.in_w as isize {
                            *d = src_row[ix as usize];
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatter-adds patches back into a `[C, in_h, in_w]` image.
fn col2im<T: Real>(cols: &[T], channels: usize, g: &ConvGeom, dst: &mut [T]) {
    let k = g.kernel;
    let p = g.positions();
    for c in 0..channels {
        let plane = &mut dst[c * g.in_h * g.in_w..(c + 1) * g.in_h * g.in_w];
        for ki in 0..k {
            for kj in 0..k {
                let row = &cols[((c * k + ki) * k + kj) * p..][..p];
                for oy in 0..g.out_h {
                    let iy = (oy * g.stride + ki) as isize - g.pad_top as isize;
                    if iy < 0 || iy >= g.in_h as isize {
                        continue;
                    }
                    let dst_row = &mut plane[iy as usize * g.in_w..][..g.in_w];
                    for (ox, &v) in row[oy * g.out_w..][..g.out_w].iter().enumerate() {
                        let ix = (ox * g.stride + kj) as isize - g.pad_left as isize;
                        if ix >= 0 && ix < g.in_w as isize {
                            dst_row[ix as usize] += v;
                        }
                    }
                }
            }
        }
    }
}

/// Row-major `c = a @ b` (+ `c` when `accumulate`).
fn mm<T: Real>(m: usize, k: usize, n: usize, a: &[T], b: &[T], c: &mut [T], accumulate: bool) {
    let beta = if accumulate { T::one() } else { T::zero() };
    T::gemm(m, k, n, T::one(), a, k as isize, 1, b, n as isize, 1, beta, c, n as isize, 1);
}

/// Row-major `c (+)= a @ b^T` with `a: m x k`, `b: n x k`.
fn mm_nt<T: Real>(m: usize, k: usize, n: usize, a: &[T], b: &[T], c: &mut [T], accumulate: bool) {
    let beta = if accumulate { T::one() } else { T::zero() };
    T::gemm(m, k, n, T::one(), a, k as isize, 1, b, 1, k as isize, beta, c, n as isize, 1);
}

/// Row-major `c (+)= a^T @ b` with `a: k x m`, `b: k x n`.
fn mm_tn<T: Real>(m: usize, k: usize, n: usize, a: &[T], b: &[T], c: &mut [T], accumulate: bool) {
    let beta = if accumulate { T::one() } else { T::zero() };
    T::gemm(m, k, n, T::one(), a, 1, m as isize, b, n as isize, 1, beta, c, n as isize, 1);
}

fn sum_per_image<T: Real>(parts: Vec<Vec<T>>, len: usize) -> Vec<T> {
    let mut acc = vec![T::zero(); len];
    for part in parts {
        for (a, b) in acc.iter_mut().zip(part) {
            *a += b;
        }
    }
    acc
}

impl<T: Real> Tape<T> {
    /// Dense 2-D convolution. `input: [N,C,H,W]`, `weight: [F,C,k,k]`, `bias: [F]`.
    pub fn conv2d(&mut self, input: Var, weight: Var, bias: Option<Var>, stride: usize, padding: Padding) -> Result<Var> {
        const OP: &str = "conv2d";
        let [n, c, h, w] = self.value(input).dims4(OP)?;
        let [f, wc, k, k2] = self.value(weight).dims4(OP)?;
        if wc != c || k != k2 {
            return Err(Error::shape(
                OP,
                format!("weight {:?} incompatible with input channels {c}", self.shape(weight)),
            ));
        }
        if let Some(b) = bias {
            if self.shape(b) != [f] {
                return Err(Error::shape(OP, format!("bias {:?} but {f} filters", self.shape(b))));
            }
        }
        let geom = ConvGeom::forward(OP, h, w, k, stride, padding)?;
        let p = geom.positions();
        let x = self.value(input).data();
        let wt = self.value(weight).data();
        let b = bias.map(|b| self.value(b).data());
        let mut out = vec![T::zero(); n * f * p];
        out.par_chunks_mut(f * p).enumerate().for_each(|(i, dst)| {
            let img = &x[i * c * h * w..(i + 1) * c * h * w];
            if geom.is_pointwise() {
                mm(f, c, p, wt, img, dst, false);
            } else {
                let cols = im2col(img, c, &geom);
                mm(f, c * k * k, p, wt, &cols, dst, false);
            }
            if let Some(b) = b {
                for (row, &bv) in dst.chunks_mut(p).zip(b) {
                    row.iter_mut().for_each(|v| *v += bv);
                }
            }
        });
        let value = Tensor::from_parts(vec![n, f, geom.out_h, geom.out_w], out);
        Ok(self.push(value, Op::Conv2d { input, weight, bias, geom }))
    }

    /// Per-channel convolution. `weight: [C,1,k,k]`.
    pub fn depthwise_conv2d(&mut self, input: Var, weight: Var, stride: usize, padding: Padding) -> Result<Var> {
        const OP: &str = "depthwise_conv2d";
        let [n, c, h, w] = self.value(input).dims4(OP)?;
        let [wc, one, k, k2] = self.value(weight).dims4(OP)?;
        if wc != c || one != 1 || k != k2 {
            return Err(Error::shape(
                OP,
                format!("weight {:?} must be [{c},1,k,k] for {c} input channels", self.shape(weight)),
            ));
        }
        let geom = ConvGeom::forward(OP, h, w, k, stride, padding)?;
        let x = self.value(input).data();
        let wt = self.value(weight).data();
        let plane_in = h * w;
        let plane_out = geom.positions();
        let mut out = vec![T::zero(); n * c * plane_out];
        out.par_chunks_mut(plane_out).enumerate().for_each(|(nc, dst)| {
            let ch = nc % c;
            let src = &x[nc * plane_in..][..plane_in];
            let ker = &wt[ch * k * k..][..k * k];
            depthwise_plane(src, ker, &geom, |o, v| dst[o] += v);
        });
        let value = Tensor::from_parts(vec![n, c, geom.out_h, geom.out_w], out);
        Ok(self.push(value, Op::Depthwise { input, weight, geom }))
    }

    /// Transposed convolution with padding 1 whose output is exactly `target_hw`.
    ///
    /// `input: [N,C,H,W]`, `weight: [C,F,k,k]`. The output padding (0 or 1) is
    /// derived from the target size.
    pub fn conv_transpose2d(
        &mut self,
        input: Var,
        weight: Var,
        bias: Option<Var>,
        stride: usize,
        target_hw: (usize, usize),
    ) -> Result<Var> {
        const OP: &str = "transposed_conv2d";
        const PAD: usize = 1;
        let [n, c, h, w] = self.value(input).dims4(OP)?;
        let [wc, f, k, k2] = self.value(weight).dims4(OP)?;
        if wc != c || k != k2 {
            return Err(Error::shape(
                OP,
                format!("weight {:?} incompatible with input channels {c}", self.shape(weight)),
            ));
        }
        if stride == 0 || k == 0 {
            return Err(Error::Config(format!("{OP}: kernel and stride must be >= 1")));
        }
        if let Some(b) = bias {
            if self.shape(b) != [f] {
                return Err(Error::shape(OP, format!("bias {:?} but {f} output channels", self.shape(b))));
            }
        }
        for (dim, size, target) in [("height", h, target_hw.0), ("width", w, target_hw.1)] {
            let reachable = transposed_reachable(size, k, stride, PAD);
            if !reachable.contains(&target) {
                return Err(Error::Config(format!(
                    "{OP}: {dim} {size} with kernel {k}, stride {stride}, pad {PAD} cannot reach {target}; achievable sizes: {reachable:?}"
                )));
            }
        }
        let geom = ConvGeom {
            kernel: k,
            stride,
            pad_top: PAD,
            pad_left: PAD,
            in_h: target_hw.0,
            in_w: target_hw.1,
            out_h: h,
            out_w: w,
        };
        let (th, tw) = target_hw;
        let x = self.value(input).data();
        let wt = self.value(weight).data();
        let b = bias.map(|b| self.value(b).data());
        let mut out = vec![T::zero(); n * f * th * tw];
        out.par_chunks_mut(f * th * tw).enumerate().for_each(|(i, dst)| {
            let img = &x[i * c * h * w..][..c * h * w];
            let mut cols = vec![T::zero(); f * k * k * h * w];
            mm_tn(f * k * k, c, h * w, wt, img, &mut cols, false);
            col2im(&cols, f, &geom, dst);
            if let Some(b) = b {
                for (plane, &bv) in dst.chunks_mut(th * tw).zip(b) {
                    plane.iter_mut().for_each(|v| *v += bv);
                }
            }
        });
        let value = Tensor::from_parts(vec![n, f, th, tw], out);
        Ok(self.push(value, Op::ConvTranspose { input, weight, bias, geom }))
    }
}

fn depthwise_plane<T: Real>(src: &[T], ker: &[T], g: &ConvGeom, mut sink: impl FnMut(usize, T)) {
    let k = g.kernel;
    for oy in 0..g.out_h {
        for ki in 0..k {
            let iy = (oy * g.stride + ki) as isize - g.pad_top as isize;
            if iy < 0 || iy >= g.in_h as isize {
                continue;
            }
            let row = &src[iy as usize * g.in_w..][..g.in_w];
            for ox in 0..g.out_w {
                let mut acc = T::zero();
                for kj in 0..k {
                    let ix = (ox * g.stride + kj) as isize - g.pad_left as isize;
                    if ix >= 0 && ix < g.in_w as isize {
                        acc += row[ix as usize] * ker[ki * k + kj];
                    }
                }
                sink(oy * g.out_w + ox, acc);
            }
        }
    }
}

type Grads3<T> = (Option<Tensor<T>>, Option<Tensor<T>>, Option<Tensor<T>>);

pub(crate) fn conv2d_backward<T: Real>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    geom: &ConvGeom,
    g: &Tensor<T>,
    need: [bool; 3],
) -> Grads3<T> {
    let [n, c, h, w] = input.dims4("conv2d").unwrap();
    let [f, _, k, _] = weight.dims4("conv2d").unwrap();
    let p = geom.positions();
    let ckk = c * k * k;
    let x = input.data();
    let wt = weight.data();
    let gd = g.data();

    let per_image: Vec<(Option<Vec<T>>, Option<Vec<T>>)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let img = &x[i * c * h * w..][..c * h * w];
            let gi = &gd[i * f * p..][..f * p];
            let cols_owned;
            let cols: &[T] = if geom.is_pointwise() {
                img
            } else if need[1] {
                cols_owned = im2col(img, c, geom);
                &cols_owned
            } else {
                &[]
            };
            let dw = need[1].then(|| {
                let mut dw = vec![T::zero(); f * ckk];
                mm_nt(f, p, ckk, gi, cols, &mut dw, false);
                dw
            });
            let dx = need[0].then(|| {
                let mut dcols = vec![T::zero(); ckk * p];
                mm_tn(ckk, f, p, wt, gi, &mut dcols, false);
                if geom.is_pointwise() {
                    dcols
                } else {
                    let mut dx = vec![T::zero(); c * h * w];
                    col2im(&dcols, c, geom, &mut dx);
                    dx
                }
            });
            (dx, dw)
        })
        .collect();

    let (dxs, dws): (Vec<_>, Vec<_>) = per_image.into_iter().unzip();
    let dx = need[0].then(|| Tensor::from_parts(input.shape().to_vec(), dxs.into_iter().flatten().flatten().collect()));
    let dw = need[1].then(|| Tensor::from_parts(weight.shape().to_vec(), sum_per_image(dws.into_iter().flatten().collect(), f * ckk)));
    let db = need[2].then(|| {
        let mut db = vec![T::zero(); f];
        for i in 0..n {
            for (fi, d) in db.iter_mut().enumerate() {
                *d += gd[(i * f + fi) * p..][..p].iter().copied().sum::<T>();
            }
        }
        Tensor::from_parts(vec![f], db)
    });
    (dx, dw, db)
}

pub(crate) fn depthwise_backward<T: Real>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    geom: &ConvGeom,
    g: &Tensor<T>,
    need: [bool; 2],
) -> (Option<Tensor<T>>, Option<Tensor<T>>) {
    let [n, c, h, w] = input.dims4("depthwise_conv2d").unwrap();
    let k = geom.kernel;
    let x = input.data();
    let wt = weight.data();
    let gd = g.data();
    let plane_in = h * w;
    let plane_out = geom.positions();

    let mut dx = need[0].then(|| vec![T::zero(); x.len()]);
    let mut dw = vec![T::zero(); wt.len()];
    for nc in 0..n * c {
        let ch = nc % c;
        let src = &x[nc * plane_in..][..plane_in];
        let gp = &gd[nc * plane_out..][..plane_out];
        let ker = &wt[ch * k * k..][..k * k];
        let dker = &mut dw[ch * k * k..][..k * k];
        for oy in 0..geom.out_h {
            for ki in 0..k {
                let iy = (oy * geom.stride + ki) as isize - geom.pad_top as isize;
                if iy < 0 || iy >= h as isize {
                    continue;
                }
                let row = iy as usize * w;
                for ox in 0..geom.out_w {
                    let go = gp[oy * geom.out_w + ox];
                    for kj in 0..k {
                        let ix = (ox * geom.stride + kj) as isize - geom.pad_left as isize;
                        if ix >= 0 && ix < w as isize {
                            let idx = row + ix as usize;
                            dker[ki * k + kj] += go * src[idx];
                            if let Some(dx) = dx.as_mut() {
                                dx[nc * plane_in + idx] += go * ker[ki * k + kj];
                            }
                        }
                    }
                }
            }
        }
    }
    (
        dx.map(|d| Tensor::from_parts(input.shape().to_vec(), d)),
        need[1].then(|| Tensor::from_parts(weight.shape().to_vec(), dw)),
    )
}

pub(crate) fn conv_transpose_backward<T: Real>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    geom: &ConvGeom,
    g: &Tensor<T>,
    need: [bool; 3],
) -> Grads3<T> {
    let [n, c, h, w] = input.dims4("transposed_conv2d").unwrap();
    let [_, f, k, _] = weight.dims4("transposed_conv2d").unwrap();
    let (th, tw) = (geom.in_h, geom.in_w);
    let fkk = f * k * k;
    let x = input.data();
    let wt = weight.data();
    let gd = g.data();

    let per_image: Vec<(Option<Vec<T>>, Option<Vec<T>>)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let gi = &gd[i * f * th * tw..][..f * th * tw];
            let cols = im2col(gi, f, geom);
            let dx = need[0].then(|| {
                let mut dx = vec![T::zero(); c * h * w];
                mm(c, fkk, h * w, wt, &cols, &mut dx, false);
                dx
            });
            let dw = need[1].then(|| {
                let img = &x[i * c * h * w..][..c * h * w];
                let mut dw = vec![T::zero(); c * fkk];
                mm_nt(c, h * w, fkk, img, &cols, &mut dw, false);
                dw
            });
            (dx, dw)
        })
        .collect();

    let (dxs, dws): (Vec<_>, Vec<_>) = per_image.into_iter().unzip();
    let dx = need[0].then(|| Tensor::from_parts(input.shape().to_vec(), dxs.into_iter().flatten().flatten().collect()));
    let dw = need[1].then(|| Tensor::from_parts(weight.shape().to_vec(), sum_per_image(dws.into_iter().flatten().collect(), c * fkk)));
    let db = need[2].then(|| {
        let mut db = vec![T::zero(); f];
        for i in 0..n {
            for (fi, d) in db.iter_mut().enumerate() {
                *d += gd[(i * f + fi) * th * tw..][..th * tw].iter().copied().sum::<T>();
            }
        }
        Tensor::from_parts(vec![f], db)
    });
    (dx, dw, db)
}
