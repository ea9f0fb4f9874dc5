//! Verification laboratory for state aggregation of history-based
//! decision processes.
//!
//! A process `P` over histories is reduced by a feature map `φ` and a
//! dispersion distribution `B` to a finite surrogate MDP `p`. The crate
//! solves history-level and state-level Bellman equations exactly (up to a
//! certified truncation slack) and checks the aggregation bounds relating
//! the two.

// NaN-rejecting `!(x > 0.0)` checks and index loops over dense tables are deliberate
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop, clippy::type_complexity)]

pub mod aggregation;
pub mod bounds;
pub mod cli;
pub mod error;
pub mod estimation;
pub mod extreme;
pub mod mdp;
pub mod process;
pub mod search;
pub mod values;

pub use error::{LabError, Result};
