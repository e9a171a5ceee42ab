//! Minimal reverse-mode differentiation over dense `f64` matrices.
//!
//! Every value on the [`Tape`] is a two-dimensional matrix: scalars are
//! `1 x 1`, row vectors `1 x d`. Operations are recorded in creation order,
//! which is already a topological order, so [`Tape::backward`] is a single
//! reverse sweep.
//!
//! ```
//! use gclab_autodiff::{Tape, ParamStore};
//! use ndarray::array;
//!
//! let mut store = ParamStore::new();
//! store.insert("w", array![[1.0, 2.0], [3.0, 4.0]]);
//!
//! let mut tape = Tape::new();
//! let x = tape.constant(array![[1.0, -1.0]]);
//! let w = tape.param(&store, "w").unwrap();
//! let y = tape.matmul(x, w).unwrap();
//! let loss = tape.sum_all(y);
//! tape.backward_into(loss, &mut store).unwrap();
//! assert_eq!(store.grad("w").unwrap()[[0, 0]], 1.0);
//! assert_eq!(store.grad("w").unwrap()[[1, 0]], -1.0);
//! ```

mod error;
mod gradcheck;
mod params;
mod sparse;
mod tape;

pub use error::{AutodiffError, Result};
pub use gradcheck::{grad_check, numeric_gradient};
pub use params::{AdamConfig, AdamState, Checkpoint, Param, ParamStore};
pub use sparse::CsrMatrix;
pub use tape::{Gradients, Reduce, Tape, Var};

/// Dense row-major matrix used for every tape value.
pub type Matrix = ndarray::Array2<f64>;
