//! Minimum class confusion: a desk-scale domain-adaptation library.
//!
//! The crate trains small multilayer perceptrons on synthetic domain-shift
//! problems and adapts them to unlabeled target data by minimizing the
//! weighted confusion between class pairs on target predictions. Everything
//! runs on a hand-rolled dense-matrix automatic-differentiation tape, so
//! every gradient in the pipeline is exact and testable against finite
//! differences.
//!
//! Module map:
//! - [`autodiff`]: matrices, the expression tape, finite-difference oracle.
//! - [`nn`]: MLP definitions, initialization, SGD with momentum, checkpoints.
//! - [`confusion`]: the class-confusion loss and its companions
//!   (cross-entropy, entropy minimization, domain-adversarial loss).
//! - [`synthdata`]: synthetic two-moons and Gaussian-blob domain generators.
//! - [`trainer`]: scenario-aware training loops, evaluation, diagnostics.

pub mod autodiff;
pub mod confusion;
pub mod error;
pub mod nn;
pub mod rng;
pub mod synthdata;
pub mod trainer;

pub use error::{Error, Result};
