#![allow(clippy::neg_cmp_op_on_partial_ord)]
//! Adversarial-robustness toolkit at desk scale.
//!
//! The crate is layered bottom-up:
//!
//! - [`autodiff`]: define-by-run reverse-mode differentiation over dense
//!   `f64` tensors, the cross-entropy loss and the momentum SGD step.
//! - [`models`]: seeded MLP classifiers, penultimate features and the
//!   robust+natural [`models::CompositeModel`].
//! - [`attacks`]: l2-bounded projected gradient ascent (PGD) against any
//!   [`Predictor`], plus the closed-form worst case for linear models.
//! - [`training`]: standard, adversarial, composite-head and ensemble training.
//! - [`ensemble`]: simplex-weighted logit averaging.
//! - [`evaluation`]: adversarial accuracy/loss, accuracy curves, AUC, the
//!   minimal training-radius search and the single-model equivalence level.
//! - [`data`]: CIFAR-10 binary and IDX loaders, synthetic Gaussians, splits.
//! - [`experiment`]: config parsing, checkpoints and the batch runner behind
//!   the `robens` binary.

pub mod attacks;
pub mod autodiff;
pub mod data;
pub mod ensemble;
mod error;
pub mod evaluation;
pub mod experiment;
pub mod models;
pub mod predictor;
pub mod seed;
pub mod training;

pub use error::{Error, Result};
pub use predictor::Predictor;
