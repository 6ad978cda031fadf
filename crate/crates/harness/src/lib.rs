//! Experiment harness for the multiway variational-Bayes library:
//! deterministic, seed-split reproductions of the convergence, metric,
//! predictive and misspecification studies, plus the file formats the CLI
//! speaks (binary tensors with TOML sidecars, CSV tables, TOML state
//! files and summaries).

pub mod data;
pub mod error;
pub mod experiments;
pub mod report;
pub mod truth;

pub use error::{HarnessError, Result};
