//! Convolutional acoustic models for speech, trained with SGD or Hessian-free
//! optimization.
//!
//! The crate is split along the processing pipeline:
//!
//! * [`features`] turns power spectra into warped log-mel filterbank features
//!   with deltas, optional energy, global normalization and context splicing.
//! * [`adaptation`] estimates a semi-tied covariance (STC) transform and
//!   per-speaker fMLLR transforms, then maps adapted features back into the
//!   correlated log-mel space.
//! * [`network`] holds the CNN/DNN graph: full and limited weight sharing
//!   convolutions, max / lp / stochastic pooling, dropout, multi-scale merges,
//!   gradients and Gauss-Newton vector products.
//! * [`optim`] contains SGD with learning-rate annealing and Hessian-free
//!   optimization with dropout masks that stay fixed across CG iterations.
//! * [`harness`] generates synthetic corpora and runs experiments end to end.
//!
//! Data-parallel loops go through [`par`]; with the `parallel` feature
//! disabled every loop runs sequentially and produces identical results.

// Negated comparisons reject NaN; index loops follow the matrix formulas.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod adaptation;
pub mod error;
pub mod features;
pub mod harness;
pub mod linalg;
pub mod network;
pub mod optim;
pub mod par;
pub mod rng;

pub use error::{Error, Result};
