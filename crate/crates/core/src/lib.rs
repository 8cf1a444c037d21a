//! Offline learning for two-player turn-based cooperative games in which one
//! player's private information confounds the logged data.
//!
//! The other player's previous action serves as an invalid instrument for the
//! acting player's action. Marginal action-value coefficients are recovered by
//! sieve minimum-distance estimation of an instrument-based moment system,
//! composed backwards through the horizon for off-policy evaluation, and
//! wrapped in confidence regions for pessimistic policy learning. Every
//! estimator has an exact counterpart in [`oracle`] for tabular games.

#![allow(clippy::needless_range_loop)]

pub mod bilinear;
pub mod cells;
pub mod error;
pub mod game_model;
pub mod learner;
pub mod moments;
pub mod ope;
pub mod oracle;
pub mod rng;
pub mod sieve;
pub mod smd;

pub use error::{Error, Result};
