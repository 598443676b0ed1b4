//! Performative prediction with neural predictors.
//!
//! The crate models a population that reacts to a deployed predictor through the
//! Resample-if-Rejected (RIR) mechanism: a sample is rejected with probability
//! `g(f(x)) = f(x) + delta` and redrawn once from the base distribution. On a finite
//! weighted base every induced density, divergence, and risk is an exact finite sum, so
//! the sensitivity constants of the RIR map can be certified rather than estimated.
//!
//! Modules:
//! - [`predictor`]: two-layer perceptron with a scaled-sigmoid head, backprop, functional norms.
//! - [`distribution`]: empirical bases, RIR densities and sampling, chi-square, 1-D W1,
//!   sensitivity certification.
//! - [`training`]: performative risk, inner risk minimization, the repeated risk
//!   minimization (RRM) loop and the tabular stable oracle.
//! - [`counterexample`]: closed-form W1-sensitive map on which RRM oscillates forever.
//! - [`harness`]: dataset ingestion, synthetic data, experiment grids, CSV/SVG artifacts.
//! - [`cli`]: command-line front end.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod counterexample;
pub mod distribution;
pub mod error;
pub mod harness;
pub mod predictor;
pub mod rng;
pub mod training;

pub use error::{Error, Result};
