//! Region-specific counterfactual image editing for grayscale images.
//!
//! This crate implements the algorithmic core of an instruction-driven image
//! editor: a diffusion-style denoising sampler with two-scale classifier-free
//! guidance, relevance maps that localize where an instruction acts, pseudo
//! masks derived from a bounding-box registry, masked denoising that confines
//! the edit to the localized region, rigid mutual-information registration
//! for longitudinal image pairs, a small instruction grammar, and the
//! evaluation metrics used to score edited outputs.
//!
//! Everything here is deterministic: all stochastic steps are driven by
//! explicit seeds, and repeated runs with identical inputs produce identical
//! outputs. The crate is `no_std`-compatible (requiring only `alloc`); file
//! formats, CLI plumbing, and parallel batch processing live in the
//! companion `rse-cli` crate.

#![cfg_attr(not(feature = "std"), no_std)]
#![deny(missing_docs)]
#![forbid(unsafe_code)]

extern crate alloc;

pub mod diffusion;
pub mod error;
pub mod imaging;
pub mod instruction;
mod linalg;
pub mod maskreg;
pub mod metrics;
pub mod registration;
pub mod rse;

pub use error::{Error, Result};
