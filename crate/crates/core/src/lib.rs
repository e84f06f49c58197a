//! Probabilistic day-ahead electricity price forecasting.
//!
//! Statistical models (LEAR, LEAR-QRA, LEAR-GARCH, naive with historical
//! simulation), distributional neural networks with ensemble and MC-dropout
//! mixtures, conformal post-processing, probabilistic evaluation with the
//! Diebold-Mariano test, and a quantile-driven battery trading backtest.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod baseline;
pub mod conformal;
pub mod data;
pub mod distribution;
pub mod error;
mod linalg;
pub mod linear;
pub mod metrics;
pub mod neural;
pub mod pipeline;
pub mod quantreg;
pub mod synth;
pub mod trading;
pub mod volatility;

pub use error::{Error, ErrorKind, Result};

/// Delivery hours per day.
pub const HOURS: usize = 24;
/// Width of the daily design matrix.
pub const NUM_FEATURES: usize = 151;
