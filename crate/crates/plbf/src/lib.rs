//! Partitioned learned Bloom filter.
//!
//! An external learned model scores elements into [0, 1], keys scoring high
//! and non-keys low. This crate partitions that score space into k regions,
//! assigns each region its own backup Bloom filter rate by solving the
//! space-minimization problem for an overall false positive budget, and
//! assembles the result into a queryable, serializable filter. The space
//! saved over a plain filter is proportional to the KL divergence between
//! the region-level key and non-key score distributions, so boundaries are
//! chosen to maximize it.
//!
//! Modules follow the pipeline: [`score`] ingests and discretizes score
//! samples (and generates synthetic Zipfian ones), [`optimizer`] picks
//! boundaries and per-region rates, [`filter`] builds and serializes the
//! composite filter over [`bloom`]'s primitive, and [`bench`] reproduces the
//! space/FPR comparison sweeps.

pub mod bench;
pub mod bloom;
pub mod error;
pub mod filter;
pub mod optimizer;
pub mod score;

pub use error::{Error, Result};
