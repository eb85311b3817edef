//! Metric-learning laboratory built around mean-singular-value
//! regularization of mini-batch embeddings.
//!
//! The crate is organized bottom-up:
//!
//! - [`linalg`]: dense matrices, one-sided Jacobi SVD, the mean singular
//!   value `s_mu`, its gradient, and the `[L, U]` bounds for unit-row
//!   matrices.
//! - [`net`]: a small feed-forward network with manual backprop and SGD with
//!   momentum under a two-phase polynomial learning-rate schedule.
//! - [`losses`]: contrastive, triplet, N-pair and angular losses with
//!   closed-form bounds, the spectrum regularizers, and the
//!   representation-counting losses.
//! - [`data`]: seeded generators (Gaussian ring, hypersphere classes), the
//!   (p, l) batch sampler, and the IDX parser.
//! - [`metrics`]: Recall@K, k-means with NMI, mode coverage.
//! - [`gan`]: the 2D ring GAN with the spectrum term on the fake batch.
//! - [`selfcheck`]: independent oracles (Gram eigensolver, finite
//!   differences) and the property suite.

pub mod data;
pub mod error;
pub mod gan;
pub mod linalg;
pub mod losses;
pub mod metrics;
pub mod net;
pub mod selfcheck;

pub use error::{Error, Result};
