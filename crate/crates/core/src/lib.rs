//! Deterministic single-process simulator of federated learning over flat,
//! consensus-group, and pluralistic-group architectures, with star or ring
//! synchronization at each level.
//!
//! The crate models training as a sequence of scheduled steps: active nodes
//! take full-batch gradient steps on their local shards, and star
//! aggregations, ring hand-offs, and group/global broadcasts fire at interval
//! boundaries. Everything is a pure function of its inputs and a single
//! master seed, so runs, reports, and output files are reproducible byte for
//! byte.
//!
//! Module map:
//! - [`dataset`]: synthetic data generation, pool partitioning, IDX ingestion
//! - [`model`]: multinomial logistic regression and model averaging
//! - [`grouping`]: EMD-based node grouping (IID grouping and clustering)
//! - [`topology`]: rings, schedules, and exact communication accounting
//! - [`engine`]: training runs for every architecture plus the centralized
//!   reference
//! - [`analysis`]: divergence/smoothness estimation, drift bounds, ring
//!   variance
//! - [`experiment`]: preset comparisons and scalability sweeps
//! - [`cli`]: config parsing and subcommand dispatch

pub mod analysis;
pub mod cli;
pub mod dataset;
pub mod engine;
pub mod error;
pub mod experiment;
pub mod grouping;
pub mod model;
pub mod rng;
pub mod topology;

pub use error::{Error, Result};
