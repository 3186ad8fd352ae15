//! Purchase prediction from marketing touchpoint counts.
//!
//! The pipeline turns per-user touchpoint event streams into lookback-window
//! count vectors, trains an ensemble of small sigmoid networks with Adam,
//! picks a balanced-accuracy threshold on validation data, compares against
//! simple baselines and attributes predictions to touchpoint types with
//! Shapley values. A calibrated synthetic generator stands in for real data.

pub mod attribution;
pub mod baselines;
pub mod cli;
pub mod datamodel;
pub mod error;
pub mod metrics;
pub mod mlp;
pub mod seeding;
pub mod synthgen;
pub mod trainer;

pub use error::{Error, Result};

/// A model that maps a raw touchpoint count vector to a score in `[0, 1]`.
pub trait Scorer: Sync {
    fn score(&self, x: &[f64]) -> f64;
}

impl<F> Scorer for F
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    fn score(&self, x: &[f64]) -> f64 {
        self(x)
    }
}
