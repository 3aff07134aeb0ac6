//! Dense tensors, a reverse-mode differentiation tape, and a finite-difference
//! gradient oracle.
//!
//! ```
//! use vssa_autodiff::{Tape, Tensor};
//!
//! let mut tape = Tape::<f64>::new();
//! let x = tape.variable(Tensor::scalar(3.0));
//! let y = tape.mul(x, x).unwrap();
//! let grads = tape.backward(y).unwrap();
//! assert_eq!(grads.get(x).unwrap().data(), &[6.0]);
//! ```

mod error;
pub mod gradcheck;
pub mod ops;
mod real;
mod tape;
mod tensor;

pub use error::{Error, Result};
pub use gradcheck::{grad_check, GradCheck, GradCheckReport};
pub use ops::conv::{transposed_reachable, ConvGeom, Padding};
pub use ops::norm::softmax;
pub use real::Real;
pub use tape::{CustomOp, Gradients, SpatialAxis, Tape, Var};
pub use tensor::Tensor;
