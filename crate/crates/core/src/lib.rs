//! Regression over nested variable subsets chosen by a prior ordering.
//!
//! Given an ordering of the predictors (most important first), the crate fits
//! Lasso or ridge models on every subset in a nested schedule and over a grid
//! of tuning parameters, then picks a `(subset, lambda)` pair by
//! cross-validation.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too
#![allow(clippy::neg_cmp_op_on_partial_ord)]

#[cfg(test)]
macro_rules! assert_close {
    ($a:expr, $b:expr, $tol:expr) => {{
        let (a, b): (f64, f64) = ($a, $b);
        assert!((a - b).abs() <= $tol, "{} vs {} (tol {})", a, b, $tol);
    }};
}

pub mod data_model;
pub mod error;
pub mod lasso_engine;
pub mod missing_data;
pub mod order_path;
pub mod ridge_path;
pub mod selection;
pub mod simgen;
pub mod suites;

pub use error::{Error, ErrorClass, Result};
