//! Meta-learned full-network adaptive control.
//!
//! The crate covers the whole offline/online loop for a learned disturbance
//! model: a small ReLU network with exact parameter Jacobians ([`nnet`]),
//! Euler-Lagrange plants with synthetic disturbance fields ([`plant`]),
//! composite-velocity tracking with online adaptation of every network
//! parameter plus baseline controllers ([`control`]), bi-level pretraining on
//! self-labelled trajectory windows ([`meta`]), the offline measurement
//! pipeline ([`signal`]), and Lyapunov/tracking diagnostics ([`analysis`]).
//! [`pipeline`] glues these into the collect/train/evaluate workflow used by
//! the command line tool.

// `!(x > 0.0)` is used on purpose so that NaN fails the check.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod control;
pub mod error;
pub mod meta;
pub mod nnet;
pub mod pipeline;
pub mod plant;
pub mod scenario;
pub mod signal;

pub use error::{Error, Result};
