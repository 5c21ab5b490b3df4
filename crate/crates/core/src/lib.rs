//! Structuring autoencoders.
//!
//! An autoencoder whose latent space is pulled towards class target positions
//! computed by metric MDS over prescribed inter-class distances, plus the
//! tooling built on top of such a latent space: a one-vs-one linear SVM with
//! center-normalized scores, margin-based guided labeling, and decoding along
//! class-center directions.
//!
//! The training loop per epoch:
//!
//! 1. encode the labeled samples into `Z`,
//! 2. solve for class targets `Z*` with SMACOF warm-started from the class means of `Z`,
//! 3. rotate the targets onto `Z` (`R = U S* Vᵀ` from the SVD of `Z · pinv(Z*)`),
//! 4. run one pass of mini-batch descent on `γ·L_S + (1−γ)·L_AE` (labeled) and `L_AE` (unlabeled).

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod active;
pub mod align;
pub mod checkpoint;
pub mod classifier;
pub mod data;
pub mod error;
mod linalg;
pub mod mds;
pub mod morph;
pub mod nn;
pub mod optim;
pub mod sae;
pub mod svm;
pub mod synth;

pub use error::{Error, Result};
