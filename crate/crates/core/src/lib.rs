//! Hard-case refinement for categorical trajectory planners.
//!
//! A generalist policy is pretrained on procedurally generated driving clips,
//! the clips it handles worst are allocated as hard cases, an ensemble of
//! low-rank adapters is refined on them with cost-penalized group policy
//! optimization over log-replay simulation, and at test time a Generalized
//! Pareto model of ensemble uncertainty decides which policy drives.

// `!(x > 0.0)` is used on purpose so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod adapters;
pub mod allocate;
pub mod error;
pub mod harness;
pub mod expand;
pub mod metrics;
pub mod policy;
pub mod refine;
pub mod tensor_nn;
pub mod world;

pub use error::{Error, Result};
