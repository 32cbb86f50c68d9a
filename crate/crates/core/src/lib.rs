//! Constrained Bayesian optimization by integrated expected conditional
//! improvement (IECI).
//!
//! The objective is modelled by a zero-mean Gaussian process and the
//! constraint by a Laplace-approximated GP classifier. Each round scores a
//! fresh Latin hypercube of candidates by how much evaluating them is
//! expected to shrink the feasibility-weighted improvement over a reference
//! set, and evaluates the winner.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bench;
pub mod config;
pub mod constraint;
pub mod design;
pub mod error;
pub mod gp;
pub mod improvement;
pub mod infer;
pub mod optimizer;
pub mod output;
pub mod simplex;
pub mod stats;
pub mod verify;

pub use error::{Error, Result};
