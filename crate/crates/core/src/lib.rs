//! Wright–Fisher diffusion with a continuum of seed-banks: forward SDE and
//! stochastic Volterra simulators, the discrete-time seed-bank Wright–Fisher
//! model with its diffusion embedding, the dual block-counting jump process
//! and marked-partition coalescent, and a moment-duality verification harness.

// Validation deliberately writes `!(x > 0.0)` so NaN fails the check too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod dual;
pub mod duality;
pub mod forward;
pub mod measure;
pub mod run;
pub mod sampling;
pub mod streams;
pub mod wright_fisher;

pub use dual::{DualState, MarkedPartition};
pub use duality::MomentEstimate;
pub use forward::{DiffusionState, PathConfig};
pub use measure::{DiscretizedMeasure, SeedBankMeasure};
pub use wright_fisher::{WfParams, WfState};
