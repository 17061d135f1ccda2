//! Skin-lesion classification pipeline at desk scale.
//!
//! The crate is organised the way the data flows through a run:
//!
//! - [`imagedata`]: image codecs, ground-truth CSV ingestion, normalisation
//!   statistics and a seeded synthetic lesion generator.
//! - [`augment`]: training-time augmentations (crop/flip/rotate, body-hair
//!   overlay, random erasing, between-class mixing) and the dihedral
//!   test-time view set.
//! - [`nn`]: a small 64-bit tensor core with a squeeze-and-excitation CNN,
//!   exact backward passes, SGD and a finite-difference gradient checker.
//! - [`meanteacher`]: the student/teacher trainer with EMA weight merging.
//! - [`ensemble`]: stratified k-fold planning, per-fold training and
//!   averaged prediction.
//! - [`metrics`]: confusion matrix, per-class recall and balanced accuracy.
//! - [`config`]: the declarative run configuration consumed by the CLI.

pub mod augment;
pub mod config;
pub mod ensemble;
mod error;
pub mod imagedata;
pub mod meanteacher;
pub mod metrics;
pub mod nn;
pub mod rng;

pub use error::{Error, Result};
