//! Benchmark harness for weight-map recovery on semi-simulated epoched
//! neural signals.
//!
//! The pipeline: generate (or import) a multichannel epoched baseline of
//! correlated noise, inject a smoothed rectangular difference signal into
//! condition-A trials at a target SNR on a channel subset, then quantify how
//! well a univariate permutation test, a linear-kernel SVM, and a sparse MKL
//! model recover the injected channels from their weight maps - via Expected
//! Ranking, cosine similarity, and TP/FP rates - across an SNR x sparsity
//! grid.

pub mod cv;
pub mod dataio;
pub mod error;
pub mod heatmap;
pub mod inject;
pub mod kernels;
pub mod learners;
pub mod mat;
pub mod recovery;
pub mod runner;
pub mod seeding;
pub mod unistats;

pub use error::{Error, Result};
pub use mat::Mat;
