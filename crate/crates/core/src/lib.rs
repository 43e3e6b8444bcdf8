//! Simulation engine for sign-based (binary information) formation control
//! of strictly passive multi-agent systems, with internal-model velocity
//! tracking, matched disturbance rejection and an observer-based variant.

// `!(x > 0.0)` is used on purpose: it also rejects NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod agents;
pub mod control;
pub mod engine;
pub mod error;
pub mod exosystem;
pub mod graph;
pub mod linalg;
pub mod output;
pub mod scenario;

pub use error::{Error, Hypothesis, Result};
