//! Exact finite-sample invariant tests for error correlation in Gaussian linear
//! regression.
//!
//! * [`model`]: design matrices, contiguity weights and covariance families.
//! * [`qform`]: distribution of Gaussian quadratic forms (characteristic-function
//!   inversion with a Monte Carlo cross-check).
//! * [`testkit`]: ratio statistics `T_B`, exact critical values, power and power envelopes.
//! * [`diagnostics`]: zero-power trap certification and genericity tools.
//! * [`enhance`]: trap-avoiding tests (artificial regressor, power enhancement).
//! * [`io`]: readers for weights and design files.

// `!(x > t)` is used on purpose so that NaN fails the check.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
#![allow(clippy::excessive_precision)]

pub mod diagnostics;
pub mod enhance;
pub mod error;
pub mod io;
pub mod linalg;
pub mod mc;
pub mod model;
pub mod qform;
pub mod testkit;

pub use error::{Error, Result};
