//! Out-of-core incomplete multi-view clustering.
//!
//! This crate fits a shared cluster structure over several feature views of
//! the same instances, tolerating instances that are missing from some
//! views, while reading the data chunk by chunk so memory stays proportional
//! to the chunk size rather than the dataset.
//!
//! * [`model`] — dataset/chunk/factor types and the running sufficient
//!   statistics.
//! * [`solver`] — the streaming alternating minimizer.
//! * [`offline`] — the full-batch reference fitter built on the same steps.
//! * [`metrics`] — clustering quality scores (NMI, accuracy).
//! * [`data`] — file formats, normalization, missingness simulation and
//!   chunk sources.

pub mod data;
pub mod error;
pub mod metrics;
pub mod model;
pub mod offline;
pub mod solver;

pub use error::{Error, Result};
