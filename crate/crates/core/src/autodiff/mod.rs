//! Reverse-mode automatic differentiation over [`Tensor`](crate::tensor::Tensor)s.
//!
//! Forward operations are methods on [`Tape`]; each records its inputs and whatever
//! activations its backward rule needs. Calling [`Tape::backward`] on a scalar loss
//! fills the `grad` buffer of every leaf created with `requires_grad = true`.
//!
//! ```
//! use artfusion::autodiff::Tape;
//! use artfusion::tensor::Tensor;
//!
//! let mut tape = Tape::<f64>::new();
//! let w = tape.variable(Tensor::from_f64(vec![3], &[1.0, -2.0, 0.5]).unwrap());
//! let sq = tape.mul(w, w).unwrap();
//! let loss = tape.sum(sq);
//! tape.backward(loss).unwrap();
//! assert_eq!(tape.grad(w).unwrap(), &[2.0, -4.0, 1.0]);
//! ```

mod tape;

pub use tape::{dropout_mask, NormStats, Tape, Var};
