//! Operator tooling around the concealer pipeline: data generation,
//! ingestion, queries, leakage checks and benchmarks.

pub mod bench;
pub mod datafile;
pub mod error;
pub mod keys;
pub mod ops;
pub mod workload;

pub use error::{CliError, Result};
