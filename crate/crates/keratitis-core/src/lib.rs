//! Core algorithms for multitask keratitis classification experiments.
//!
//! Everything in this crate is pure computation: the domain data model,
//! deterministic mirrored-twin expansion and image operators, grouped
//! stratified k-fold assignment, a synthetic dataset generator, a small
//! trainable multitask network with its cost-weighted losses, the
//! ROC/threshold/confusion evaluation suite, and the demographic subgroup
//! statistics. File formats, paths and the command-line surface live in the
//! companion `keratitis-cli` crate.
//!
//! The crate is `no_std` (with `alloc`); all randomness flows through the
//! explicit [`rng::Rng`] generator so every operation is reproducible from
//! seeds alone.

#![no_std]
#![deny(unsafe_code)]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod data;
pub mod error;
pub mod eval;
pub mod image;
pub mod model;
pub mod rng;
pub mod split;
pub mod stats;
pub mod synth;

pub use error::{Error, Result};
