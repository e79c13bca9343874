//! Hardness toolkit for approximate query processing over joins.
//!
//! - [`mathcore`]: entropy, capacity constants and closed-form lower bounds.
//! - [`kabset`]: randomized construction and verification of the set
//!   families behind the adversarial instances.
//! - [`relgen`]: adversarial database instances with a hidden branch.
//! - [`joinexec`]: exact aggregate evaluation used as ground truth.
//! - [`estimators`]: Bernoulli sampling over joins and its analysis.
//! - [`harness`]: experiment configuration, sweeps and persistence.

// NaN must fail range checks, so `!(x > 0.0)` is deliberate
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod estimators;
pub mod harness;
pub mod joinexec;
pub mod kabset;
pub mod mathcore;
pub mod relation;
pub mod relgen;

pub use relation::{Column, Relation};
