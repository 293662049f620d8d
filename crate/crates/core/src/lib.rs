//! Fine-grained classification with adaptive sub-class pseudo-labels.
//!
//! High-variance classes are partitioned into sub-classes by X-Means, with a
//! per-class cap on the number of clusters steered by validation false
//! negatives. An embedding encoder is trained on the resulting pseudo-labels
//! with cross-entropy plus an optional triplet term; evaluation always maps
//! predictions back to the parent classes.

pub mod cli;
pub mod clustering;
pub mod controller;
pub mod data;
pub mod encoder;
pub mod error;
pub mod experiment;
pub mod metrics;
pub mod numeric;
pub mod pipeline;
pub mod subclass;

pub use error::{Error, Result};
pub use numeric::{Matrix, Rng};
