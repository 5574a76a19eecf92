//! Shapley-value explanations of tabular reinforcement learning agents.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod approx;
pub mod characteristics;
pub mod env;
pub mod error;
pub mod explain;
pub mod mdp;
pub mod reproduce;
pub mod rng;
pub mod shapley;

pub use error::{Error, Result};
