//! Desk-scale laboratory for adversarial training on long-tailed class
//! distributions.
//!
//! The crate bundles everything needed to study why adversarially trained
//! classifiers lose robustness on rare classes and what balanced self-teacher
//! distillation recovers:
//!
//! - [`tensor`] / [`graph`] / [`optim`]: a dense f64 tensor type, a
//!   define-by-run reverse-mode autodiff tape, and SGD with momentum and
//!   weight decay.
//! - [`datasets`]: Gaussian-mixture samplers, exponential long-tailed
//!   subsampling, balanced re-sampling, and the CIFAR-10 binary record
//!   format.
//! - [`models`]: linear, MLP, and tiny convolutional classifiers.
//! - [`attacks`]: FGSM and multi-step PGD under an L∞ budget.
//! - [`losses`]: cross-entropy, balanced softmax, temperature-scaled
//!   distillation, and the combined student objective.
//! - [`theory`]: closed-form tail errors of the equal-weight linear
//!   classifier on the binary Gaussian mixture, with Monte-Carlo validation.
//! - [`trainer`]: the two-phase balanced-self-teacher pipeline plus
//!   baselines and per-class evaluation.
//!
//! The crate is `no_std`-compatible (requires `alloc`); all float
//! transcendentals go through `libm` so results are identical across
//! platforms. File and terminal IO live in the companion CLI crate.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod attacks;
pub mod checkpoint;
pub mod datasets;
pub mod error;
pub mod graph;
pub mod losses;
pub mod math;
pub mod models;
pub mod optim;
pub mod rng;
pub mod tensor;
pub mod theory;
pub mod trainer;

pub use error::{Error, Result};
pub use tensor::Tensor;
