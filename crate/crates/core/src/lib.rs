//! Randomized subset filtering of tractograms.
//!
//! A density-matching filter is run on many random subsets of a tractogram.
//! Each run votes accept or reject on every streamline it saw, and the
//! per-streamline acceptance rates become plausible / implausible /
//! inconclusive labels. A small 1-D convolutional network can then be trained
//! on the consistently voted streamlines.

pub mod classifier;
pub mod compress;
pub mod density;
pub mod engine;
pub mod error;
pub mod filter;
pub mod phantom;
pub mod report;
pub mod rng;
pub mod trackio;
pub mod tractogram;

pub use error::{Error, Result};
