//! Command-line companion for the region-specific editing core: file
//! formats, dataset pipeline, and image/map persistence.
//!
//! The heavy lifting — diffusion sampling, relevance maps, registration,
//! metrics — lives in `rse-core`. This crate adds everything that touches
//! the filesystem: PNG and raw-float map IO with atomic writes, JSON wire
//! schemas, the registration-gated manifest builder, and dataset
//! statistics. The `rse` binary wires these into subcommands.

pub mod error;
pub mod formats;
pub mod io;
pub mod pipeline;

pub use error::{CliError, Result};
