//! Co-simulation of federated learning over a NOMA uplink.
//!
//! The crate is organised by subsystem:
//!
//! - [`channel`]: free-space path loss with Rayleigh fading, SIC rates for the
//!   NOMA uplink, interference-free TDMA rates and the broadcast downlink time.
//! - [`quantize`]: DoReFa-style limited-bit quantization and the
//!   rate-adaptive bit-width plan.
//! - [`sched_graph`]: the scheduling conflict graph, the degree-weighted greedy
//!   maximum-weight independent set, an exact oracle and a scalable
//!   round-by-round scheduler.
//! - [`power_alloc`]: weighted sum-rate power control by polyblock outer
//!   approximation, plus a lattice oracle and the max-power baseline.
//! - [`fl`]: IDX ingestion, non-i.i.d. partitioning, the 784-300-100-10
//!   perceptron, local SGD and weighted aggregation.
//! - [`experiment`]: the end-to-end pipeline per scheme and the CSV/JSON
//!   reports.
//!
//! Data-parallel loops go through [`exec`], which falls back to sequential
//! iteration when the `parallel` feature is disabled.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod channel;
pub mod config;
pub mod error;
pub mod exec;
pub mod experiment;
pub mod fl;
pub mod power_alloc;
pub mod quantize;
pub mod sched_graph;
pub mod seed;

pub use error::{Error, Result};
pub use exec::Execution;
