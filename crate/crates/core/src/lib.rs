//! Covariance matrix estimation by nonparametric empirical Bayes shrinkage
//! of the vectorized matrix, with the usual comparators and a simulation
//! harness.
//!
//! The main entry point is [`gmodel::msg_estimate`]; pair it with
//! [`posdef::correct_pd`] for a positive-definite result.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baselines;
pub mod bench;
pub mod error;
pub mod gmodel;
pub mod io;
pub mod la;
pub mod methods;
pub mod posdef;
pub mod seed;
pub mod sim;

pub use error::{CovError, Result};
pub use la::{DataMatrix, SymmetricEstimate};
