//! Conformal uncertainty targets and exceptional subgroup mining on tabular data.
//!
//! The pipeline splits a dataset into calibration and test records, obtains
//! class probabilities or quantile pairs (from external predictions or a
//! built-in linear baseline), calibrates split-conformal sets or intervals,
//! and mines conjunctive subgroups whose average set size or interval length
//! deviates from the test-set average.

pub mod conformal;
pub mod data;
pub mod error;
pub mod mining;
pub mod predictor;
pub mod report;

pub use error::{Error, Result};
