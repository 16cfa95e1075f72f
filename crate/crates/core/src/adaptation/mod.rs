//! Speaker adaptation in a decorrelated space.
//!
//! A diagonal GMM is trained on pooled static features, a semi-tied
//! covariance transform `S` is estimated so the data is well modelled by
//! diagonal Gaussians, per-speaker fMLLR transforms `(A, b)` are estimated in
//! the `S` space, and adapted features are mapped back with `S^-1` so they
//! keep the frequency locality convolutions rely on.

mod chain;
mod fmllr;
mod gmm;
mod persist;
mod stc;

pub use chain::{adapt_features, invert_adaptation, AdaptationChain};
pub use fmllr::{estimate_fmllr, fmllr_objective, FmllrOptions, FmllrTransform};
pub use gmm::{train_diag_gmm, DiagonalGmm, GmmTrainOptions, GmmTrainTrace};
pub use stc::{estimate_stc, gmm_fingerprint, weighted_within_covariance, StcOptions, StcTransform};

/// Inner row-update sweeps per outer iteration for STC and fMLLR.
pub const ROW_SWEEPS: usize = 2;

/// Variance floor relative to the global per-dimension variance.
pub const VARIANCE_FLOOR_SCALE: f64 = 1e-4;
