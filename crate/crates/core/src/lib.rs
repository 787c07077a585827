//! Peak alignment for GC-MS chromatograms.
//!
//! Peaks are detected per single ion chromatogram, described by their apex
//! mass spectrum, peak profile and surrounding chromatogram segment, scored
//! pairwise by a Siamese network and grouped across samples by average-linkage
//! clustering.

pub mod baseline_rules;
pub mod error;
pub mod evaluation;
pub mod features;
pub mod grouping;
pub mod ingest;
mod linalg;
pub mod model;
pub mod neuralnet;
pub mod signal;
pub mod synthdata;

pub use error::{Error, Result};
