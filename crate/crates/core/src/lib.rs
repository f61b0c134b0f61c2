//! Loss-along-line analysis of SGD training runs.
//!
//! The crate trains small feed-forward classifiers with SGD, records every
//! update step, and measures the full-batch and mini-batch loss along the
//! line `theta0 + s * d` spanned by each step's direction. On top of those
//! measurements it provides shape comparisons between lines, polynomial
//! fits, a comparison of update step rules (fixed learning rate, parabolic
//! approximation, exact line search) and a batch-size resampling study.
//!
//! Module map:
//!
//! - [`nncore`]: reverse-mode autodiff, models and parameter vectors
//! - [`data`]: datasets, binary loaders, subsetting, batching
//! - [`trainer`]: SGD with momentum, step records, replay
//! - [`linescan`]: grids and loss scans along a line
//! - [`analysis`]: curve statistics, fits, distance matrices
//! - [`strategies`]: update step rules evaluated on scanned lines
//! - [`batchsim`]: virtual batches and directional-derivative ratios
//! - [`archive`]: on-disk layout for trajectories and scans

pub mod analysis;
pub mod archive;
pub mod batchsim;
pub mod data;
mod error;
pub mod linescan;
pub mod nncore;
pub mod strategies;
pub mod trainer;

pub use error::{Error, Result};
