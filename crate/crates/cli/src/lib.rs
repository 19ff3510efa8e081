//! Config-driven experiment runner: training, baseline comparison, loss
//! landscapes, the single-store oracle and scenario export.

pub mod commands;
pub mod config;
