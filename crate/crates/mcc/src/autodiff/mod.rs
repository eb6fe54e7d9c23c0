//! Reverse-mode automatic differentiation over dense matrices.
//!
//! [`matrix`] provides the plain value type, [`tape`] records expressions
//! and replays them backwards for exact gradients, and [`finite_diff`]
//! supplies the central-difference oracle the tests compare against.

pub mod finite_diff;
pub mod matrix;
pub mod tape;

pub use matrix::{Matrix, LOG_CLAMP_FLOOR};
pub use tape::{Gradients, NodeId, Tape};
