//! Elementwise arithmetic, activations and matrix products.

use crate::tape::Op;
use crate::{Error, Real, Result, Tape, Tensor, Var};

pub(crate) fn zip<T: Real>(a: &Tensor<T>, b: &Tensor<T>, f: impl Fn(T, T) -> T) -> Tensor<T> {
    debug_assert_eq!(a.shape(), b.shape());
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::from_parts(a.shape().to_vec(), data)
}

fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

impl<T: Real> Tape<T> {
    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(op, format!("{:?} vs {:?}", self.shape(a), self.shape(b))));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let v = zip(self.value(a), self.value(b), |x, y| x + y);
        Ok(self.push(v, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let v = zip(self.value(a), self.value(b), |x, y| x - y);
        Ok(self.push(v, Op::Sub(a, b)))
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let v = zip(self.value(a), self.value(b), |x, y| x * y);
        Ok(self.push(v, Op::Mul(a, b)))
    }

    /// Multiplication by a constant.
    pub fn scale(&mut self, a: Var, factor: T) -> Var {
        let v = self.value(a).map(|x| x * factor);
        self.push(v, Op::Scale(a, factor))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| if x > T::zero() { x } else { T::zero() });
        self.push(v, Op::Relu(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.value(a).map(sigmoid);
        self.push(v, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.value(a).map(T::tanh);
        self.push(v, Op::Tanh(a))
    }

    /// `[M,K] @ [K,N] -> [M,N]`.
    pub fn matmul(&mut self, lhs: Var, rhs: Var) -> Result<Var> {
        let [m, k] = self.value(lhs).dims2("matmul")?;
        let [k2, n] = self.value(rhs).dims2("matmul")?;
        if k != k2 {
            return Err(Error::shape("matmul", format!("[{m},{k}] @ [{k2},{n}]")));
        }
        let mut out = vec![T::zero(); m * n];
        T::gemm(
            m,
            k,
            n,
            T::one(),
            self.value(lhs).data(),
            k as isize,
            1,
            self.value(rhs).data(),
            n as isize,
            1,
            T::zero(),
            &mut out,
            n as isize,
            1,
        );
        Ok(self.push(Tensor::from_parts(vec![m, n], out), Op::MatMul { lhs, rhs }))
    }

    /// Affine map over rows: `input: [R,D]`, `weight: [O,D]`, `bias: [O]` -> `[R,O]`.
    pub fn linear(&mut self, input: Var, weight: Var, bias: Option<Var>) -> Result<Var> {
        let [r, d] = self.value(input).dims2("linear")?;
        let [o, d2] = self.value(weight).dims2("linear")?;
        if d != d2 {
            return Err(Error::shape("linear", format!("input [{r},{d}] vs weight [{o},{d2}]")));
        }
        if let Some(b) = bias {
            if self.shape(b) != [o] {
                return Err(Error::shape("linear", format!("bias {:?} vs {o} outputs", self.shape(b))));
            }
        }
        let mut out = vec![T::zero(); r * o];
        if let Some(b) = bias {
            let bd = self.value(b).data();
            for row in out.chunks_mut(o) {
                row.copy_from_slice(bd);
            }
        }
        T::gemm(
            r,
            d,
            o,
            T::one(),
            self.value(input).data(),
            d as isize,
            1,
            self.value(weight).data(),
            1,
            d as isize,
            T::one(),
            &mut out,
            o as isize,
            1,
        );
        Ok(self.push(Tensor::from_parts(vec![r, o], out), Op::Linear { input, weight, bias }))
    }
}

pub(crate) fn linear_backward<T: Real>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    g: &Tensor<T>,
    need: [bool; 3],
) -> (Option<Tensor<T>>, Option<Tensor<T>>, Option<Tensor<T>>) {
    let [r, d] = input.dims2("linear").unwrap();
    let [o, _] = weight.dims2("linear").unwrap();
    let dx = need[0].then(|| {
        let mut dx = vec![T::zero(); r * d];
        T::gemm(r, o, d, T::one(), g.data(), o as isize, 1, weight.data(), d as isize, 1, T::zero(), &mut dx, d as isize, 1);
        Tensor::from_parts(vec![r, d], dx)
    });
    let dw = need[1].then(|| {
        let mut dw = vec![T::zero(); o * d];
        T::gemm(o, r, d, T::one(), g.data(), 1, o as isize, input.data(), d as isize, 1, T::zero(), &mut dw, d as isize, 1);
        Tensor::from_parts(vec![o, d], dw)
    });
    let db = need[2].then(|| {
        let mut db = vec![T::zero(); o];
        for row in g.data().chunks(o) {
            for (a, &b) in db.iter_mut().zip(row) {
                *a += b;
            }
        }
        Tensor::from_parts(vec![o], db)
    });
    (dx, dw, db)
}

pub(crate) fn matmul_backward<T: Real>(
    a: &Tensor<T>,
    b: &Tensor<T>,
    g: &Tensor<T>,
    need: [bool; 2],
) -> (Option<Tensor<T>>, Option<Tensor<T>>) {
    let [m, k] = a.dims2("matmul").unwrap();
    let [_, n] = b.dims2("matmul").unwrap();
    let da = need[0].then(|| {
        let mut da = vec![T::zero(); m * k];
        T::gemm(m, n, k, T::one(), g.data(), n as isize, 1, b.data(), 1, n as isize, T::zero(), &mut da, k as isize, 1);
        Tensor::from_parts(vec![m, k], da)
    });
    let db = need[1].then(|| {
        let mut db = vec![T::zero(); k * n];
        T::gemm(k, m, n, T::one(), a.data(), 1, k as isize, g.data(), n as isize, 1, T::zero(), &mut db, n as isize, 1);
        Tensor::from_parts(vec![k, n], db)
    });
    (da, db)
}
