//! Stabilized dynamic treatment regimes for right-censored multi-stage data.
//!
//! The crate estimates treatment rules whose decision coefficients are shared
//! across stages, from data where follow-up may be cut short by censoring.
//! Three estimators are provided:
//!
//! - [`censored_q`]: stagewise Q-learning with unshared coefficients,
//! - [`shared_q`]: Q-learning with one decision vector for all stages,
//! - [`shared_o`]: direct maximization of a smoothed value estimate.
//!
//! [`sim`] generates synthetic diabetes cohorts and [`evaluation`] compares
//! methods by cross-validation or against simulated ground truth.

pub mod censored_q;
pub mod cli;
pub mod config;
pub mod error;
pub mod evaluation;
pub mod model_io;
pub mod numopt;
pub mod regime;
pub mod shared_o;
pub mod shared_q;
pub mod sim;
pub mod survival;
pub mod trajectories;

pub use error::{Error, Result};
