//! Seasonal multi-store, multi-product inventory control as an MDP, with
//! heuristic baselines, a small actor-critic trainer (SAC and TD3 variants),
//! a single-store dynamic-programming oracle and 2D actor loss-landscape
//! slices around trained parameters.
//!
//! Module map:
//! - [`env`]: state, actions, cost accrual, transitions and episodes.
//! - [`demand`]: correlated Gaussian demand scenarios.
//! - [`policies`]: mean-ordering and order-up-to-S baselines.
//! - [`nn`]: fully connected ReLU networks with manual backprop.
//! - [`agent`]: replay buffer, SAC/TD3 objectives and the training loop.
//! - [`dp`]: backward-induction oracle and Monte-Carlo policy evaluation.
//! - [`landscape`]: filter-normalized random directions and loss grids.

// Validation uses `!(x >= 0.0)` on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod agent;
pub mod demand;
pub mod dp;
pub mod env;
pub mod error;
pub mod landscape;
pub mod nn;
pub mod policies;
pub mod seed;
pub mod stats;

pub use error::{Error, Result};
