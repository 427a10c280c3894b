//! Estimating model judgment distributions over NLI labels from first-token scores,
//! and comparing them with human judgment distributions.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod backend;
pub mod cli;
pub mod data;
pub mod estimator;
pub mod io;
pub mod metrics;
pub mod prompting;
pub mod viz;
