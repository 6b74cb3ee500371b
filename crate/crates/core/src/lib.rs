//! Sequential stochastic teams with additive Gaussian observation channels.
//!
//! Declare a team with [`model::TeamSpec`], reduce it to an equivalent
//! static team with [`reduction::static_reduce`], evaluate and optimize
//! strategy profiles, and produce numerical evidence for the structural
//! conditions that guarantee existence of team-optimal solutions.

// `!(x > 0.0)` is used on purpose so that NaN fails the check.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod benchmarks;
pub mod certify;
pub mod config;
pub mod cost;
pub mod counterexample;
pub mod error;
pub mod evaluation;
pub mod explore;
pub mod linalg;
pub mod model;
pub mod optimize;
pub mod quadrature;
pub mod reduction;
pub mod space;
pub mod strategy;

pub use error::{Error, Result};
