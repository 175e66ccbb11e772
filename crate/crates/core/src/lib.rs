#![allow(clippy::neg_cmp_op_on_partial_ord)]
#![cfg_attr(test, allow(clippy::excessive_precision, clippy::approx_constant))]
//! PAC-Bayesian meta-learning toolkit: divergences, Gaussian prior families,
//! generalization bounds, lemma checks, data sources and a meta-trainer.

pub mod bounds;
pub mod data;
pub mod divergence;
pub mod error;
pub mod gaussian;
pub mod lemmas;
pub mod model;
pub mod rng;
pub mod trainer;

pub use error::{Error, Result};
